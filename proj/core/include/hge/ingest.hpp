#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hge/nn.hpp"

namespace hge {

/// Rows of features in [0, 1] with one integer label each.
struct Dataset {
  nn::Matrix inputs;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(inputs.cols()); }
};

enum class DataFormat { Idx, Csv };

/// IDX image tensor (magic 0x00000803, unsigned bytes): one row per image,
/// pixels scaled by 1/255.
nn::Matrix parse_idx_images(const std::string& bytes);
/// IDX label vector (magic 0x00000801).
std::vector<int> parse_idx_labels(const std::string& bytes);

/// Headerless CSV: label first, then d numeric features per row. Features are
/// min-max rescaled to [0, 1] over the whole file.
Dataset parse_csv(const std::string& text);

/// For IDX, `path` names the image file and the label file is found by
/// replacing "images" with "labels" in the file name (MNIST convention), or
/// passed explicitly.
Dataset load_external(const std::filesystem::path& path, DataFormat format,
                      const std::filesystem::path& labels_path = {});

DataFormat parse_format(const std::string& name);

}  // namespace hge
