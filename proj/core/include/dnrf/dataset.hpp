#pragma once

// On-disk dataset: meta.json, background.png, frames/%05d.png, frames.jsonl.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "dnrf/image.hpp"
#include "dnrf/render.hpp"

namespace dnrf::data {

inline constexpr int kDatasetFormatVersion = 1;

enum class Split { kTrain, kTest };

std::string_view to_string(Split split);

// Half-open pixel box [row0, row1) x [col0, col1).
struct BBox {
  int row0 = 0;
  int col0 = 0;
  int row1 = 0;
  int col1 = 0;

  int area() const { return std::max(0, row1 - row0) * std::max(0, col1 - col0); }
  bool empty() const { return area() == 0; }
  bool contains(int row, int col) const { return row >= row0 && row < row1 && col >= col0 && col < col1; }
  bool operator==(const BBox&) const = default;
};

struct FrameRecord {
  int id = 0;
  std::string image_path;  // relative to the dataset root
  Image image;             // RGB in [0, 1]
  render::Pose pose;       // camera -> canonical
  std::vector<float> expression;
  BBox bbox;
  int latent_index = -1;  // row in the latent table; -1 for frames never trained on
  Split split = Split::kTrain;

  bool operator==(const FrameRecord&) const = default;
};

struct DatasetHeader {
  int format_version = kDatasetFormatVersion;
  render::Camera camera;
  render::SceneBounds bounds;
  render::Vec3 head_center = render::Vec3::Zero();  // pivot for pose edits
  int expr_dim = 76;
  std::string description;

  bool operator==(const DatasetHeader& o) const {
    return format_version == o.format_version && camera == o.camera && bounds == o.bounds &&
           head_center == o.head_center && expr_dim == o.expr_dim && description == o.description;
  }
};

struct Dataset {
  DatasetHeader header;
  Image background;
  std::vector<FrameRecord> frames;

  std::vector<int> frame_indices(Split split) const;
  int latent_rows() const;  // 1 + the largest latent index
  // Index of the lowest-id training frame; throws when there is none.
  int first_train_frame() const;
  // Checks every invariant; throws DataError naming the offending frame.
  void validate() const;
  bool operator==(const Dataset&) const = default;
};

void save_dataset(const Dataset& dataset, const std::filesystem::path& root);
// Loads and validates eagerly. Throws DataError with a specific code.
Dataset load_dataset(const std::filesystem::path& root);
// meta.json only, without touching images.
DatasetHeader load_dataset_header(const std::filesystem::path& root);

}  // namespace dnrf::data
