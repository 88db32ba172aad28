#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "cxr/data/manifest.hpp"
#include "cxr/tensor/tensor.hpp"

namespace cxr {

// One element of a training stream: which image, and whether it is drawn
// through augmentation at load time.
struct TrainingEntry {
  std::size_t index = 0;
  int copy = 0;  // 0 = the study itself; > 0 = an augmentation-tagged copy
  bool augment = false;
  friend bool operator==(const TrainingEntry&, const TrainingEntry&) = default;
};

std::vector<TrainingEntry> make_entries(std::size_t count, bool augment);

// Lateral-stream expansion: each entry becomes the original plus
// `extra_copies` augmentation-tagged copies.
std::vector<TrainingEntry> expand_lateral(std::span<const TrainingEntry> entries, int extra_copies = 3);

// Indices of records that carry an image for `view`, in record order.
std::vector<std::size_t> records_with_view(const std::vector<StudyRecord>& records, View view);

// Loads and resizes every listed record's `view` image to (1, size, size).
// Relative paths resolve against `root`.
std::vector<Tensor> load_view_images(const std::vector<StudyRecord>& records,
                                     std::span<const std::size_t> rows, View view, int size,
                                     const std::filesystem::path& root);

std::filesystem::path resolve_image_path(const std::string& path, const std::filesystem::path& root);

}  // namespace cxr
