#include "dnrf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dnrf/errors.hpp"

namespace dnrf::data {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string frame_file(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frames/%05d.png", id);
  return buf;
}

json vec3_json(const render::Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

render::Vec3 vec3_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw DataError(DataErrorCode::kMalformed, std::string(what) + ": expected 3 numbers");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json header_json(const DatasetHeader& h) {
  const auto& c = h.camera;
  return json{
      {"format_version", h.format_version},
      {"camera",
       {{"focal", c.focal}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height},
        {"z_near", c.z_near}, {"z_far", c.z_far}}},
      {"bounds", {{"min", vec3_json(h.bounds.min)}, {"max", vec3_json(h.bounds.max)}}},
      {"head_center", vec3_json(h.head_center)},
      {"expr_dim", h.expr_dim},
      {"background", "background.png"},
      {"frames", "frames.jsonl"},
      {"conventions",
       {{"pixel_center_offset", 0.5},
        {"image_rows", "down"},
        {"camera_forward", "-z"},
        {"pose", "camera_to_canonical, 4x4 row-major"},
        {"color", "8-bit values mapped to [0,1], no sRGB decode"}}},
      {"description", h.description},
  };
}

DatasetHeader header_from(const json& j) {
  DatasetHeader h;
  h.format_version = j.at("format_version").get<int>();
  if (h.format_version != kDatasetFormatVersion) {
    throw DataError(DataErrorCode::kVersionMismatch, "dataset format version " + std::to_string(h.format_version) +
                                                         ", this build reads " +
                                                         std::to_string(kDatasetFormatVersion));
  }
  const json& c = j.at("camera");
  h.camera.focal = c.at("focal").get<double>();
  h.camera.cx = c.at("cx").get<double>();
  h.camera.cy = c.at("cy").get<double>();
  h.camera.width = c.at("width").get<int>();
  h.camera.height = c.at("height").get<int>();
  h.camera.z_near = c.at("z_near").get<double>();
  h.camera.z_far = c.at("z_far").get<double>();
  h.bounds.min = vec3_from(j.at("bounds").at("min"), "bounds.min");
  h.bounds.max = vec3_from(j.at("bounds").at("max"), "bounds.max");
  h.head_center = j.contains("head_center") ? vec3_from(j.at("head_center"), "head_center") : h.bounds.center();
  h.expr_dim = j.at("expr_dim").get<int>();
  h.description = j.value("description", "");
  return h;
}

json frame_json(const FrameRecord& f) {
  const auto pose = f.pose.row_major();
  return json{
      {"id", f.id},
      {"image", f.image_path},
      {"pose", std::vector<double>(pose.begin(), pose.end())},
      {"expression", f.expression},
      {"bbox", {f.bbox.row0, f.bbox.col0, f.bbox.row1, f.bbox.col1}},
      {"latent_index", f.latent_index},
      {"split", std::string(to_string(f.split))},
  };
}

FrameRecord frame_from(const json& j) {
  FrameRecord f;
  f.id = j.at("id").get<int>();
  f.image_path = j.at("image").get<std::string>();
  const auto pose = j.at("pose").get<std::vector<double>>();
  if (pose.size() != 16) {
    throw DataError(DataErrorCode::kBadPose, "frame " + std::to_string(f.id) + ": pose needs 16 numbers");
  }
  f.pose = render::Pose::from_row_major(pose);
  f.expression = j.at("expression").get<std::vector<float>>();
  const auto box = j.at("bbox").get<std::vector<int>>();
  if (box.size() != 4) throw DataError(DataErrorCode::kBadFrame, "frame " + std::to_string(f.id) + ": bbox needs 4 ints");
  f.bbox = {box[0], box[1], box[2], box[3]};
  f.latent_index = j.value("latent_index", -1);
  const std::string split = j.value("split", "train");
  if (split == "train") f.split = Split::kTrain;
  else if (split == "test") f.split = Split::kTest;
  else throw DataError(DataErrorCode::kBadFrame, "frame " + std::to_string(f.id) + ": unknown split '" + split + "'");
  return f;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorCode::kMissingFile, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(DataErrorCode::kMalformed, path.string() + ": " + e.what());
  }
}

}  // namespace

std::string_view to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

std::vector<int> Dataset::frame_indices(Split split) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (frames[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

int Dataset::latent_rows() const {
  int rows = 0;
  for (const auto& f : frames) rows = std::max(rows, f.latent_index + 1);
  return rows;
}

int Dataset::first_train_frame() const {
  int best = -1;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].split != Split::kTrain) continue;
    if (best < 0 || frames[i].id < frames[best].id) best = static_cast<int>(i);
  }
  if (best < 0) throw DataError(DataErrorCode::kBadFrame, "dataset has no training frames");
  return best;
}

void Dataset::validate() const {
  try {
    header.camera.validate();
  } catch (const ContractViolation& e) {
    throw DataError(DataErrorCode::kMalformed, e.what());
  }
  if (!((header.bounds.max - header.bounds.min).array() > 0.0).all()) {
    throw DataError(DataErrorCode::kMalformed, "scene bounds must have positive extent");
  }
  if (header.expr_dim < 0) throw DataError(DataErrorCode::kMalformed, "expr_dim must be non-negative");
  const int w = header.camera.width;
  const int h = header.camera.height;
  if (background.width != w || background.height != h || background.channels != 3) {
    throw DataError(DataErrorCode::kMalformed, "background image does not match the camera size");
  }
  for (const auto& f : frames) {
    const std::string who = "frame " + std::to_string(f.id);
    if (!f.pose.is_rigid(1e-5)) throw DataError(DataErrorCode::kBadPose, who + ": pose is not a rigid transform");
    if (static_cast<int>(f.expression.size()) != header.expr_dim) {
      throw DataError(DataErrorCode::kBadFrame, who + ": expression has " + std::to_string(f.expression.size()) +
                                                    " coefficients, expected " + std::to_string(header.expr_dim));
    }
    if (!std::all_of(f.expression.begin(), f.expression.end(), [](float v) { return std::isfinite(v); })) {
      throw DataError(DataErrorCode::kBadFrame, who + ": non-finite expression coefficient");
    }
    const auto& b = f.bbox;
    if (b.row0 < 0 || b.col0 < 0 || b.row0 > b.row1 || b.col0 > b.col1 || b.row1 > h || b.col1 > w) {
      throw DataError(DataErrorCode::kBadFrame, who + ": bounding box outside the image");
    }
    if (f.image.width != w || f.image.height != h || f.image.channels != 3) {
      throw DataError(DataErrorCode::kBadFrame, who + ": image does not match the camera size");
    }
    if (f.split == Split::kTrain && f.latent_index < 0) {
      throw DataError(DataErrorCode::kBadFrame, who + ": training frame without a latent index");
    }
  }
}

void save_dataset(const Dataset& dataset, const fs::path& root) {
  dataset.validate();
  fs::create_directories(root / "frames");
  {
    std::ofstream meta(root / "meta.json");
    if (!meta) throw DataError(DataErrorCode::kIo, "cannot write " + (root / "meta.json").string());
    meta << header_json(dataset.header).dump(2) << "\n";
  }
  write_png8(dataset.background, root / "background.png");
  std::ofstream lines(root / "frames.jsonl");
  if (!lines) throw DataError(DataErrorCode::kIo, "cannot write " + (root / "frames.jsonl").string());
  for (const auto& f : dataset.frames) {
    FrameRecord out = f;
    if (out.image_path.empty()) out.image_path = frame_file(f.id);
    write_png8(f.image, root / out.image_path);
    lines << frame_json(out).dump() << "\n";
  }
}

DatasetHeader load_dataset_header(const fs::path& root) {
  const fs::path meta = root / "meta.json";
  if (!fs::exists(meta)) throw DataError(DataErrorCode::kMissingFile, "no meta.json in " + root.string());
  try {
    return header_from(read_json(meta));
  } catch (const json::exception& e) {
    throw DataError(DataErrorCode::kMalformed, "meta.json: " + std::string(e.what()));
  }
}

Dataset load_dataset(const fs::path& root) {
  Dataset d;
  d.header = load_dataset_header(root);
  d.background = read_png_rgb(root / "background.png");

  const fs::path frames_path = root / "frames.jsonl";
  std::ifstream in(frames_path);
  if (!in) throw DataError(DataErrorCode::kMissingFile, "cannot open " + frames_path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    FrameRecord f;
    try {
      f = frame_from(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(DataErrorCode::kMalformed, "frames.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    f.image = read_png_rgb(root / f.image_path);
    d.frames.push_back(std::move(f));
  }
  d.validate();
  return d;
}

}  // namespace dnrf::data
