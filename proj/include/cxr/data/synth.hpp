#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cxr/data/image.hpp"
#include "cxr/data/manifest.hpp"

namespace cxr {

// Desk-scale stand-in for a chest-radiograph corpus. Each pathology has a
// planted signature in a characteristic region:
//   Atelectasis       flat horizontal bright band, upper zone
//   Cardiomegaly      enlarged central cardiac silhouette
//   Consolidation     checker-textured bright patch, outer mid zone
//   Edema             vertically striped patch, perihilar
//   Pleural Effusion  bright smooth blob at the lung base
struct SynthConfig {
  int n_studies = 2000;
  int n_valid = 400;
  int image_size = 64;
  std::uint64_t seed = 1;
  double lateral_fraction = 0.3;
  // Exact share of training studies whose manifest cell reads -1.0, per class.
  std::array<double, kNumPathologies> uncertain_fraction{0.2, 0.2, 0.2, 0.2, 0.2};
  std::array<double, kNumPathologies> prevalence{0.30, 0.25, 0.20, 0.30, 0.35};
  // Share of definite negatives written as blank cells.
  double unmentioned_fraction = 0.3;
  double noise_sigma = 8.0;

  void validate() const;
};

// Inclusive pixel bounds.
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct SynthStudy {
  StudyRecord record;
  std::array<bool, kNumPathologies> truth{};
  // Frontal-view signature boxes for the classes present in the image.
  std::array<std::optional<BoundingBox>, kNumPathologies> boxes{};
  ImageBuffer frontal;
  std::optional<ImageBuffer> lateral;
};

// Renders one split in memory. `first_patient` numbers the patients;
// uncertain cells are injected only when `with_uncertain` is set.
std::vector<SynthStudy> synth_split(const SynthConfig& config, const std::string& split, int count,
                                    int first_patient, bool with_uncertain);

struct SynthOutput {
  std::filesystem::path train_manifest;
  std::filesystem::path valid_manifest;
  std::filesystem::path boxes_csv;  // study_id,class,x0,y0,x1,y1 (frontal view)
  std::filesystem::path truth_csv;  // study_id + the five true labels
};

// Writes <out>/train.csv, <out>/valid.csv, boxes.csv, truth.csv and the PGM
// images under <out>/train and <out>/valid. The validation split carries no
// uncertain labels. Byte-identical for a fixed config.
SynthOutput synth_generate(const SynthConfig& config, const std::filesystem::path& out_dir);

struct BoxRecord {
  std::string study_id;
  int class_index = 0;
  BoundingBox box;
};

std::vector<BoxRecord> read_boxes(const std::filesystem::path& csv_path);

}  // namespace cxr
