#include "dnrf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "dnrf/errors.hpp"

namespace dnrf::data {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

using nlohmann::json;

constexpr char kMagic[4] = {'D', 'N', 'R', 'F'};
constexpr char kTrailer[4] = {'F', 'R', 'N', 'D'};

json vec3_json(const render::Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json adam_json(const nn::AdamState<float>& a) {
  return {{"lr", a.config.lr}, {"beta1", a.config.beta1}, {"beta2", a.config.beta2}, {"eps", a.config.eps},
          {"step", a.step_count}};
}

json header_json(const train::TrainState& s) {
  const auto& f = s.field_config();
  json latent_steps = json::array();
  for (const auto& a : s.adam_latent) latent_steps.push_back(a.step_count);
  return {
      {"field",
       {{"expr_dim", f.expr_dim},
        {"latent_dim", f.latent_dim},
        {"backbone_layers", f.backbone_layers},
        {"backbone_width", f.backbone_width},
        {"color_layers", f.color_layers},
        {"color_width", f.color_width}}},
      {"encoding",
       {{"pos_freqs", f.encoding.pos_freqs},
        {"dir_freqs", f.encoding.dir_freqs},
        {"include_input", f.encoding.include_input}}},
      {"design",
       {{"sigma_activation", "relu"},
        {"rgb_activation", "sigmoid"},
        {"heads_read", "last backbone layer after relu"},
        {"fine_samples", "sorted union of coarse and resampled"},
        {"background", "residual transmittance"},
        {"importance_floor", render::kImportanceFloor},
        {"latent_decay", "explicit l2 loss term"}}},
      {"samples", {{"n_coarse", s.samples.n_coarse}, {"n_fine", s.samples.n_fine}}},
      {"bounds", {{"min", vec3_json(s.bounds.min)}, {"max", vec3_json(s.bounds.max)}}},
      {"latents", {{"rows", s.latents.rows}, {"dim", s.latents.dim}}},
      {"adam",
       {{"coarse", adam_json(s.adam_coarse)},
        {"fine", adam_json(s.adam_fine)},
        {"latent", s.adam_latent.empty() ? json(nullptr) : adam_json(s.adam_latent.front())},
        {"latent_steps", latent_steps}}},
      {"rng", {{"seed", s.seed}, {"iteration", s.iteration}}},
      {"dataset_path", s.dataset_path},
  };
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  out.insert(out.end(), p, p + values.size_bytes());
}

void put_params(std::vector<std::uint8_t>& out, const field::FieldParams<float>& params) {
  for (const auto& slot : params.slots()) put_floats(out, slot.values);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw DataError(DataErrorCode::kTruncated, std::string("checkpoint ends inside ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void floats(std::span<float> into, const char* what) {
    need(into.size_bytes(), what);
    std::memcpy(into.data(), bytes_.data() + pos_, into.size_bytes());
    pos_ += into.size_bytes();
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

render::Vec3 vec3_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

nn::AdamConfig adam_config_from(const json& j) {
  return {j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
          j.at("eps").get<double>()};
}

}  // namespace

std::size_t checkpoint_header_size(const train::TrainState& state) { return header_json(state).dump().size(); }

std::vector<std::uint8_t> serialize_checkpoint(const train::TrainState& s) {
  if (static_cast<int>(s.adam_latent.size()) != s.latents.rows ||
      s.latents.values.size() != static_cast<std::size_t>(s.latents.rows) * s.latents.dim) {
    throw ContractViolation("serialize_checkpoint: latent table and optimizer state disagree");
  }
  const std::string header = header_json(s).dump();
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  put_params(out, s.coarse);
  put_params(out, s.fine);
  put_floats(out, s.latents.values);
  for (const auto* a : {&s.adam_coarse, &s.adam_fine}) {
    put_floats(out, a->first_moment);
    put_floats(out, a->second_moment);
  }
  for (const auto& a : s.adam_latent) {
    put_floats(out, a.first_moment);
    put_floats(out, a.second_moment);
  }
  out.insert(out.end(), std::begin(kTrailer), std::end(kTrailer));
  return out;
}

train::TrainState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.text(4, "magic") != std::string(kMagic, 4)) {
    throw DataError(DataErrorCode::kMalformed, "not a .dnrf checkpoint (bad magic)");
  }
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    throw DataError(DataErrorCode::kVersionMismatch, "checkpoint version " + std::to_string(version) +
                                                         ", this build reads " + std::to_string(kCheckpointVersion));
  }
  const std::uint32_t header_size = in.u32("header size");
  const std::string header_text = in.text(header_size, "header");

  train::TrainState s;
  try {
    const json h = json::parse(header_text);
    field::FieldConfig f;
    const json& jf = h.at("field");
    f.expr_dim = jf.at("expr_dim").get<int>();
    f.latent_dim = jf.at("latent_dim").get<int>();
    f.backbone_layers = jf.at("backbone_layers").get<int>();
    f.backbone_width = jf.at("backbone_width").get<int>();
    f.color_layers = jf.at("color_layers").get<int>();
    f.color_width = jf.at("color_width").get<int>();
    const json& je = h.at("encoding");
    f.encoding.pos_freqs = je.at("pos_freqs").get<int>();
    f.encoding.dir_freqs = je.at("dir_freqs").get<int>();
    f.encoding.include_input = je.at("include_input").get<bool>();
    try {
      f.validate();
    } catch (const ContractViolation& e) {
      throw DataError(DataErrorCode::kMalformed, std::string("checkpoint header: ") + e.what());
    }
    s.coarse = field::make_field_params<float>(f);
    s.fine = field::make_field_params<float>(f);

    s.samples.n_coarse = h.at("samples").at("n_coarse").get<int>();
    s.samples.n_fine = h.at("samples").at("n_fine").get<int>();
    s.bounds.min = vec3_from(h.at("bounds").at("min"));
    s.bounds.max = vec3_from(h.at("bounds").at("max"));
    s.latents.rows = h.at("latents").at("rows").get<int>();
    s.latents.dim = h.at("latents").at("dim").get<int>();
    if (s.latents.rows < 0 || s.latents.dim != f.latent_dim) {
      throw DataError(DataErrorCode::kMalformed, "checkpoint header: latent table shape disagrees with the field");
    }
    s.latents.values.assign(static_cast<std::size_t>(s.latents.rows) * s.latents.dim, 0.0f);

    const json& ja = h.at("adam");
    s.adam_coarse = nn::AdamState<float>::zeros(s.coarse.parameter_count(), adam_config_from(ja.at("coarse")));
    s.adam_coarse.step_count = ja.at("coarse").at("step").get<std::int64_t>();
    s.adam_fine = nn::AdamState<float>::zeros(s.fine.parameter_count(), adam_config_from(ja.at("fine")));
    s.adam_fine.step_count = ja.at("fine").at("step").get<std::int64_t>();
    const auto steps = ja.at("latent_steps").get<std::vector<std::int64_t>>();
    if (static_cast<int>(steps.size()) != s.latents.rows) {
      throw DataError(DataErrorCode::kMalformed, "checkpoint header: one latent optimizer step count per row expected");
    }
    if (s.latents.rows > 0) {
      const nn::AdamConfig latent_cfg = adam_config_from(ja.at("latent"));
      for (std::int64_t step : steps) {
        s.adam_latent.push_back(nn::AdamState<float>::zeros(static_cast<std::size_t>(s.latents.dim), latent_cfg));
        s.adam_latent.back().step_count = step;
      }
    }
    s.seed = h.at("rng").at("seed").get<std::uint64_t>();
    s.iteration = h.at("rng").at("iteration").get<std::int64_t>();
    s.dataset_path = h.value("dataset_path", "");
  } catch (const json::exception& e) {
    throw DataError(DataErrorCode::kMalformed, std::string("checkpoint header: ") + e.what());
  }

  for (auto* params : {&s.coarse, &s.fine}) {
    for (auto& slot : params->slots()) in.floats(slot.values, "parameters");
  }
  in.floats(s.latents.values, "latent table");
  for (auto* a : {&s.adam_coarse, &s.adam_fine}) {
    in.floats(a->first_moment, "optimizer moments");
    in.floats(a->second_moment, "optimizer moments");
  }
  for (auto& a : s.adam_latent) {
    in.floats(a.first_moment, "latent optimizer moments");
    in.floats(a.second_moment, "latent optimizer moments");
  }
  if (in.text(4, "trailer") != std::string(kTrailer, 4)) {
    throw DataError(DataErrorCode::kMalformed, "checkpoint trailer missing");
  }
  if (in.remaining() != 0) throw DataError(DataErrorCode::kMalformed, "trailing bytes after checkpoint");
  return s;
}

void save_checkpoint(const train::TrainState& state, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(state);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError(DataErrorCode::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(DataErrorCode::kIo, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

train::TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataErrorCode::kMissingFile, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace dnrf::data
