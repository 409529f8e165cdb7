#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "sse/embedder.hpp"
#include "sse/error.hpp"
#include "text_util.hpp"

namespace sse {

namespace {

constexpr char kMagic[4] = {'S', 'S', 'E', 'M'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in, const std::string& where) {
  std::uint32_t v;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw DataError(where + "truncated checkpoint");
  return v;
}

nlohmann::json config_to_json(const EncoderConfig& c) {
  return {{"input_dim", c.input_dim},         {"conv_channels", c.conv_channels},
          {"conv_kernel", c.conv_kernel},     {"conv_stride", c.conv_stride},
          {"dropout_p", c.dropout_p},         {"n_heads", c.n_heads},
          {"ffn_dim", c.ffn_dim},             {"projection_dim", c.projection_dim},
          {"temperature", c.temperature},     {"learning_rate", c.learning_rate},
          {"batch_pairs", c.batch_pairs},     {"max_steps", c.max_steps},
          {"patience", c.patience},           {"eval_every", c.eval_every},
          {"dev_fraction", c.dev_fraction},   {"seed", c.seed}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.input_dim = j.at("input_dim");
  c.conv_channels = j.at("conv_channels");
  c.conv_kernel = j.at("conv_kernel");
  c.conv_stride = j.at("conv_stride");
  c.dropout_p = j.at("dropout_p");
  c.n_heads = j.at("n_heads");
  c.ffn_dim = j.at("ffn_dim");
  c.projection_dim = j.at("projection_dim");
  c.temperature = j.at("temperature");
  c.learning_rate = j.at("learning_rate");
  c.batch_pairs = j.at("batch_pairs");
  c.max_steps = j.at("max_steps");
  c.patience = j.at("patience");
  c.eval_every = j.at("eval_every");
  c.dev_fraction = j.at("dev_fraction");
  c.seed = j.at("seed");
  return c;
}

}  // namespace

void save_model(const EncoderModel& model, const std::filesystem::path& path) {
  auto out = text::open_out(path.string());
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  const std::string cfg = config_to_json(model.config()).dump();
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto& layout = model.params().layout();
  put_u32(out, static_cast<std::uint32_t>(kTensorCount));
  for (const auto& t : layout.tensors()) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rows));
    put_u32(out, static_cast<std::uint32_t>(t.cols));
    out.write(reinterpret_cast<const char*>(model.params().values().data() + t.offset),
              static_cast<std::streamsize>(t.rows * t.cols * sizeof(float)));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

EncoderModel load_model(const std::filesystem::path& path) {
  auto in = text::open_in(path.string());
  const std::string where = path.string() + ": ";
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw DataError(where + "bad magic, not an SSEM file");
  if (get_u32(in, where) != kVersion) throw DataError(where + "unsupported checkpoint version");
  const std::uint32_t cfg_len = get_u32(in, where);
  std::string cfg_text(cfg_len, '\0');
  if (!in.read(cfg_text.data(), cfg_len)) throw DataError(where + "truncated config");
  EncoderConfig cfg;
  try {
    cfg = config_from_json(nlohmann::json::parse(cfg_text));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + "bad config: " + e.what());
  }
  EncoderModel model(cfg);
  const auto& layout = model.params().layout();
  if (get_u32(in, where) != static_cast<std::uint32_t>(kTensorCount)) throw DataError(where + "tensor count mismatch");
  for (const auto& t : layout.tensors()) {
    const std::uint32_t name_len = get_u32(in, where);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw DataError(where + "truncated tensor name");
    const std::uint32_t rows = get_u32(in, where), cols = get_u32(in, where);
    if (name != t.name || rows != t.rows || cols != t.cols)
      throw DataError(where + "tensor '" + name + "' does not match expected '" + t.name + "' shape");
    if (!in.read(reinterpret_cast<char*>(model.params().values().data() + t.offset),
                 static_cast<std::streamsize>(rows * cols * sizeof(float))))
      throw DataError(where + "truncated tensor '" + name + "'");
  }
  for (float v : model.params().values())
    if (!std::isfinite(v)) throw DataError(where + "non-finite parameter");
  return model;
}

}  // namespace sse
