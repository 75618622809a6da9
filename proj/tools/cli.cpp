#include "cli.hpp"

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <thread>

#include "dnrf/checkpoint.hpp"
#include "dnrf/dataset.hpp"
#include "dnrf/errors.hpp"
#include "dnrf/service.hpp"
#include "dnrf/synthetic.hpp"
#include "dnrf/train.hpp"
#include "dnrf/view.hpp"

namespace dnrf::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

struct Globals {
  std::uint64_t seed = 0;
  int threads = 0;
  std::string log_level = "info";
};

// Routes spdlog to `err` for the duration of one run() call.
class LogScope {
 public:
  LogScope(std::ostream& err, const std::string& level) : previous_(spdlog::default_logger()) {
    auto logger = std::make_shared<spdlog::logger>("dnrf", std::make_shared<spdlog::sinks::ostream_sink_mt>(err));
    logger->set_pattern("[%H:%M:%S.%e] [%l] %v");
    logger->set_level(spdlog::level::from_str(level));
    spdlog::set_default_logger(logger);
  }
  ~LogScope() { spdlog::set_default_logger(previous_); }

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

void print_config(std::ostream& err, const std::string& command, const json& config) {
  err << json{{"command", command}, {"config", config}}.dump() << "\n";
}

json field_json(const field::FieldConfig& f) {
  return {{"expr_dim", f.expr_dim},           {"latent_dim", f.latent_dim},
          {"backbone_layers", f.backbone_layers}, {"backbone_width", f.backbone_width},
          {"color_layers", f.color_layers},   {"color_width", f.color_width},
          {"pos_freqs", f.encoding.pos_freqs}, {"dir_freqs", f.encoding.dir_freqs},
          {"include_input", f.encoding.include_input}};
}

json train_json(const train::TrainConfig& t) {
  return {{"rays_per_batch", t.rays_per_batch},
          {"n_coarse", t.n_coarse},
          {"n_fine", t.n_fine},
          {"lr", t.lr},
          {"latent_lr", t.latent_lr ? json(*t.latent_lr) : json(nullptr)},
          {"latent_decay", t.latent_decay},
          {"bbox_fraction", t.bbox_fraction},
          {"iterations", t.iterations},
          {"seed", t.seed},
          {"checkpoint_interval", t.checkpoint_interval},
          {"use_latent", t.use_latent},
          {"train_fraction", t.train_fraction},
          {"rays_per_chunk", t.rays_per_chunk}};
}

std::map<int, float> parse_overrides(const std::vector<std::string>& items) {
  std::map<int, float> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    std::size_t used_k = 0;
    std::size_t used_v = 0;
    int k = -1;
    float v = 0.0f;
    try {
      if (eq == std::string::npos) throw std::invalid_argument("no '='");
      k = std::stoi(item.substr(0, eq), &used_k);
      v = std::stof(item.substr(eq + 1), &used_v);
    } catch (const std::exception&) {
      throw ContractViolation("--expr expects INDEX=VALUE, got '" + item + "'");
    }
    if (used_k != eq || used_v != item.size() - eq - 1) {
      throw ContractViolation("--expr expects INDEX=VALUE, got '" + item + "'");
    }
    out[k] = v;
  }
  return out;
}

fs::path dataset_for(const std::string& flag, const train::TrainState& state) {
  if (!flag.empty()) return flag;
  if (state.dataset_path.empty()) {
    throw DataError(DataErrorCode::kMissingFile, "checkpoint records no dataset path; pass --data");
  }
  return state.dataset_path;
}

json metrics_json(const train::EvalResult& r) {
  json frames = json::array();
  for (const auto& f : r.frames) frames.push_back({{"frame", f.frame}, {"l1", f.l1}, {"psnr", f.psnr}, {"ssim", f.ssim}});
  return {{"l1", r.l1}, {"psnr", r.psnr}, {"ssim", r.ssim}, {"frames", frames}};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Expression-conditioned dynamic radiance fields: synthesize, train, render, evaluate, serve."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = available cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
      ->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset from the analytic oracle");
  std::string synth_preset = "blob";
  std::string synth_out;
  std::optional<int> synth_train_frames, synth_test_frames, synth_samples, synth_size;
  synth->add_option("--preset", synth_preset)->check(CLI::IsMember({"blob", "blob-jitter"}))->capture_default_str();
  synth->add_option("--out", synth_out, "Dataset directory")->required();
  synth->add_option("--train-frames", synth_train_frames);
  synth->add_option("--test-frames", synth_test_frames);
  synth->add_option("--samples", synth_samples, "Oracle samples per ray");
  synth->add_option("--size", synth_size, "Image width and height");

  // train
  auto* trn = app.add_subcommand("train", "Optimize both networks and the latent table");
  std::string train_data, train_out, train_preset = "desk", train_log, train_resume;
  std::optional<std::int64_t> iters, ckpt_interval;
  std::optional<int> rays, n_coarse, n_fine, chunk, backbone_layers, backbone_width, color_layers, color_width,
      latent_dim, pos_freqs, dir_freqs;
  std::optional<double> lr, latent_lr, latent_decay, bbox_fraction, train_fraction;
  bool no_latent = false;
  int log_every = 10;
  trn->add_option("--data", train_data, "Dataset directory")->required();
  trn->add_option("--out", train_out, "Checkpoint path (.dnrf)")->required();
  trn->add_option("--preset", train_preset)->check(CLI::IsMember({"desk", "full"}))->capture_default_str();
  trn->add_option("--iters", iters)->check(CLI::NonNegativeNumber);
  trn->add_option("--rays", rays);
  trn->add_option("--n-coarse", n_coarse);
  trn->add_option("--n-fine", n_fine);
  trn->add_option("--chunk", chunk, "Rays per work unit");
  trn->add_option("--lr", lr);
  trn->add_option("--latent-lr", latent_lr);
  trn->add_option("--latent-decay", latent_decay);
  trn->add_option("--bbox-fraction", bbox_fraction);
  trn->add_option("--train-fraction", train_fraction);
  trn->add_flag("--no-latent", no_latent, "Keep every latent code at zero");
  trn->add_option("--checkpoint-interval", ckpt_interval);
  trn->add_option("--backbone-layers", backbone_layers);
  trn->add_option("--backbone-width", backbone_width);
  trn->add_option("--color-layers", color_layers);
  trn->add_option("--color-width", color_width);
  trn->add_option("--latent-dim", latent_dim);
  trn->add_option("--pos-freqs", pos_freqs);
  trn->add_option("--dir-freqs", dir_freqs);
  trn->add_option("--log", train_log, "JSON-lines training log (default: <out>.log.jsonl)");
  trn->add_option("--log-every", log_every)->check(CLI::PositiveNumber)->capture_default_str();
  trn->add_option("--resume", train_resume, "Continue from a checkpoint");

  // render
  auto* rnd = app.add_subcommand("render", "Render an edited view of a dataset frame");
  std::string render_ckpt, render_data, render_out;
  std::vector<std::string> render_expr;
  std::vector<std::string> render_outputs{"color"};
  view::ViewRequest request;
  std::optional<int> render_resolution;
  rnd->add_option("--ckpt", render_ckpt)->required();
  rnd->add_option("--data", render_data, "Dataset directory (default: the one recorded in the checkpoint)");
  rnd->add_option("--frame", request.base_frame, "Base frame position in the dataset")->capture_default_str();
  rnd->add_option("--expr", render_expr, "Expression edit INDEX=VALUE (repeatable)");
  rnd->add_option("--yaw", request.pose_delta.yaw, "Degrees");
  rnd->add_option("--pitch", request.pose_delta.pitch, "Degrees");
  rnd->add_option("--roll", request.pose_delta.roll, "Degrees");
  rnd->add_option("--tx", request.pose_delta.tx);
  rnd->add_option("--ty", request.pose_delta.ty);
  rnd->add_option("--tz", request.pose_delta.tz);
  rnd->add_option("--resolution", render_resolution, "Output width in pixels");
  rnd->add_option("--outputs", render_outputs, "color, depth, normals, alpha")->delimiter(',')->capture_default_str();
  rnd->add_option("--out", render_out, "Output directory; writes <output>.png")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Metrics of a checkpoint against a dataset, as JSON on stdout");
  std::string eval_data, eval_ckpt, eval_split = "all", eval_policy = "per-frame";
  ev->add_option("--data", eval_data)->required();
  ev->add_option("--ckpt", eval_ckpt)->required();
  ev->add_option("--split", eval_split)->check(CLI::IsMember({"train", "test", "all"}))->capture_default_str();
  ev->add_option("--latent-policy", eval_policy)
      ->check(CLI::IsMember({"per-frame", "first-train-frame"}))
      ->capture_default_str();

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP render service over a checkpoint");
  std::string serve_ckpt, serve_data, serve_host = "127.0.0.1";
  int serve_port = 8080;
  int serve_workers = 4;
  srv->add_option("--ckpt", serve_ckpt)->required();
  srv->add_option("--data", serve_data);
  srv->add_option("--host", serve_host)->capture_default_str();
  srv->add_option("--port", serve_port)->check(CLI::Range(0, 65535))->capture_default_str();
  srv->add_option("--workers", serve_workers, "Concurrent requests")->check(CLI::PositiveNumber)->capture_default_str();

  std::vector<std::string> argv_store{"dnrf"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  LogScope logging(err, g.log_level);
  const int threads = resolve_thread_count(g.threads);
  try {
    ThreadPool pool(threads);

    if (*synth) {
      auto spec = data::synthetic_preset(synth_preset);
      if (synth_train_frames) spec.train_frames = *synth_train_frames;
      if (synth_test_frames) spec.test_frames = *synth_test_frames;
      if (synth_samples) spec.oracle_samples = *synth_samples;
      if (synth_size) spec.width = spec.height = *synth_size;
      print_config(err, "synth",
                   {{"preset", spec.name}, {"out", synth_out}, {"seed", g.seed}, {"width", spec.width},
                    {"height", spec.height}, {"train_frames", spec.train_frames}, {"test_frames", spec.test_frames},
                    {"oracle_samples", spec.oracle_samples}, {"color_jitter", spec.color_jitter},
                    {"expr_dim", spec.expr_dim}});
      spec.validate();
      const auto dataset = data::generate_synthetic(spec, g.seed);
      data::save_dataset(dataset, synth_out);
      out << json{{"dataset", synth_out}, {"frames", dataset.frames.size()}}.dump() << "\n";
      return kOk;
    }

    if (*trn) {
      auto preset = train::training_preset(train_preset);
      auto& fc = preset.field;
      auto& tc = preset.train;
      const data::Dataset dataset = data::load_dataset(train_data);
      fc.expr_dim = dataset.header.expr_dim;
      if (iters) tc.iterations = *iters;
      if (rays) tc.rays_per_batch = *rays;
      if (n_coarse) tc.n_coarse = *n_coarse;
      if (n_fine) tc.n_fine = *n_fine;
      if (chunk) tc.rays_per_chunk = *chunk;
      if (lr) tc.lr = *lr;
      if (latent_lr) tc.latent_lr = *latent_lr;
      if (latent_decay) tc.latent_decay = *latent_decay;
      if (bbox_fraction) tc.bbox_fraction = *bbox_fraction;
      if (train_fraction) tc.train_fraction = *train_fraction;
      if (ckpt_interval) tc.checkpoint_interval = *ckpt_interval;
      if (no_latent) tc.use_latent = false;
      if (backbone_layers) fc.backbone_layers = *backbone_layers;
      if (backbone_width) fc.backbone_width = *backbone_width;
      if (color_layers) fc.color_layers = *color_layers;
      if (color_width) fc.color_width = *color_width;
      if (latent_dim) fc.latent_dim = *latent_dim;
      if (pos_freqs) fc.encoding.pos_freqs = *pos_freqs;
      if (dir_freqs) fc.encoding.dir_freqs = *dir_freqs;
      tc.seed = g.seed;
      fc.validate();
      tc.validate();

      train::TrainState state;
      if (!train_resume.empty()) {
        state = data::load_checkpoint(train_resume);
        if (!(state.field_config() == fc)) {
          throw ContractViolation("--resume: checkpoint architecture differs from the requested one");
        }
        tc.seed = state.seed;
      } else {
        state = train::init_train_state(fc, dataset, tc);
      }
      state.dataset_path = fs::absolute(train_data).lexically_normal().string();

      const json config = {{"preset", train_preset}, {"data", train_data}, {"out", train_out},
                           {"threads", threads},     {"field", field_json(fc)}, {"train", train_json(tc)},
                           {"resume", train_resume}};
      print_config(err, "train", config);
      const fs::path log_path = train_log.empty() ? fs::path(train_out + ".log.jsonl") : fs::path(train_log);
      if (log_path.has_parent_path()) fs::create_directories(log_path.parent_path());
      std::ofstream log(log_path);
      if (!log) throw DataError(DataErrorCode::kIo, "cannot write " + log_path.string());
      log << json{{"config", config}}.dump() << "\n";

      const auto start = std::chrono::steady_clock::now();
      train::run_training(state, dataset, tc, &pool, [&](const train::TrainState& s, const train::LossReport& r) {
        if (s.iteration % log_every == 0 || s.iteration == tc.iterations) {
          log << json{{"iter", s.iteration},         {"frame", r.frame},
                      {"loss_coarse", r.loss_coarse}, {"loss_fine", r.loss_fine},
                      {"loss_latent", r.loss_latent}, {"wall_ms", r.wall_ms}}
                     .dump()
              << "\n";
        }
        if (s.iteration % 1000 == 0) {
          spdlog::info("iter {} loss {:.6f} (coarse {:.6f}, fine {:.6f})", s.iteration, r.total(), r.loss_coarse,
                       r.loss_fine);
        }
        if (tc.checkpoint_interval > 0 && s.iteration % tc.checkpoint_interval == 0) {
          data::save_checkpoint(s, train_out);
        }
      });
      data::save_checkpoint(state, train_out);
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      out << json{{"checkpoint", train_out}, {"iterations", state.iteration}, {"seconds", seconds}}.dump() << "\n";
      return kOk;
    }

    if (*rnd) {
      auto state = data::load_checkpoint(render_ckpt);
      const auto dataset = data::load_dataset(dataset_for(render_data, state));
      request.overrides = parse_overrides(render_expr);
      request.resolution = render_resolution;
      request.outputs.clear();
      for (const auto& name : render_outputs) request.outputs.push_back(view::output_from_string(name));
      print_config(err, "render",
                   {{"ckpt", render_ckpt}, {"request", json::parse(service::request_to_json(request))},
                    {"out", render_out}, {"threads", threads}});
      const view::Scene scene = view::make_scene(std::move(state), dataset);
      const auto images = view::render_view(scene, request, &pool);
      fs::create_directories(render_out);
      json files = json::array();
      for (auto o : request.outputs) {
        const fs::path path = fs::path(render_out) / (std::string(view::to_string(o)) + ".png");
        write_bytes(view::encode_output(images, o), path);
        files.push_back(path.string());
      }
      out << json{{"files", files}}.dump() << "\n";
      return kOk;
    }

    if (*ev) {
      const auto state = data::load_checkpoint(eval_ckpt);
      const auto dataset = data::load_dataset(eval_data);
      const auto policy =
          eval_policy == "per-frame" ? train::LatentPolicy::kPerFrame : train::LatentPolicy::kFirstTrainFrame;
      print_config(err, "eval",
                   {{"data", eval_data}, {"ckpt", eval_ckpt}, {"split", eval_split},
                    {"latent_policy", eval_policy}, {"threads", threads}});
      json result = {{"iteration", state.iteration}, {"latent_policy", eval_policy}};
      for (auto split : {data::Split::kTrain, data::Split::kTest}) {
        const std::string name(data::to_string(split));
        if (eval_split != "all" && eval_split != name) continue;
        if (eval_split == "all" && dataset.frame_indices(split).empty()) continue;
        result[name] = metrics_json(train::evaluate(state, dataset, split, policy, &pool));
      }
      out << result.dump() << "\n";
      return kOk;
    }

    if (*srv) {
      print_config(err, "serve",
                   {{"ckpt", serve_ckpt}, {"data", serve_data}, {"host", serve_host}, {"port", serve_port},
                    {"workers", serve_workers}, {"threads", threads}});
      service::RenderService service({.http_workers = serve_workers, .render_threads = threads});
      const int port = service.start(serve_host, serve_port);
      out << json{{"host", serve_host}, {"port", port}}.dump() << std::endl;
      auto state = data::load_checkpoint(serve_ckpt);
      const auto dataset = data::load_dataset(dataset_for(serve_data, state));
      service.load(view::make_scene(std::move(state), dataset));
      spdlog::info("checkpoint loaded; serving");
      g_interrupted = false;
      auto previous_int = std::signal(SIGINT, on_signal);
      auto previous_term = std::signal(SIGTERM, on_signal);
      while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      std::signal(SIGINT, previous_int);
      std::signal(SIGTERM, previous_term);
      service.stop();
      return kOk;
    }
  } catch (const DataError& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  } catch (const NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return kNumericFailure;
  } catch (const ContractViolation& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kUsage;
  }
  return kUsage;
}

}  // namespace dnrf::cli
