#include "cxr/data/dataset.hpp"

#include "cxr/common/error.hpp"
#include "cxr/common/parallel.hpp"
#include "cxr/data/image.hpp"
#include "cxr/data/transforms.hpp"

namespace cxr {

std::vector<TrainingEntry> make_entries(std::size_t count, bool augment) {
  std::vector<TrainingEntry> entries(count);
  for (std::size_t i = 0; i < count; ++i) entries[i] = {i, 0, augment};
  return entries;
}

std::vector<TrainingEntry> expand_lateral(std::span<const TrainingEntry> entries, int extra_copies) {
  require(extra_copies >= 0, ErrorKind::kInvalidArgument, "expand_lateral: negative copy count");
  std::vector<TrainingEntry> out;
  out.reserve(entries.size() * static_cast<std::size_t>(extra_copies + 1));
  for (const auto& e : entries) {
    out.push_back(e);
    for (int c = 1; c <= extra_copies; ++c) out.push_back({e.index, c, true});
  }
  return out;
}

std::vector<std::size_t> records_with_view(const std::vector<StudyRecord>& records, View view) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].path(view)) rows.push_back(i);
  }
  return rows;
}

std::filesystem::path resolve_image_path(const std::string& path, const std::filesystem::path& root) {
  std::filesystem::path p(path);
  return p.is_absolute() ? p : root / p;
}

std::vector<Tensor> load_view_images(const std::vector<StudyRecord>& records,
                                     std::span<const std::size_t> rows, View view, int size,
                                     const std::filesystem::path& root) {
  std::vector<Tensor> images(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) {
    const auto& record = records.at(rows[i]);
    const auto& path = record.path(view);
    require(path.has_value(), ErrorKind::kInvalidArgument,
            "study " + record.study_id + " has no " + std::string(to_string(view)) + " image");
    images[i] = resize_bilinear(load_image(resolve_image_path(*path, root)), size);
  });
  return images;
}

}  // namespace cxr
