#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cxr {

inline constexpr std::size_t kNumPathologies = 5;

inline constexpr std::array<std::string_view, kNumPathologies> kPathologyNames = {
    "Atelectasis", "Cardiomegaly", "Consolidation", "Edema", "Pleural Effusion"};

enum class LabelState { kPositive, kNegative, kUncertain, kUnmentioned };

enum class View { kFrontal, kLateral };

std::string_view to_string(View view);
View parse_view(std::string_view text);

// Manifest cell text: "1.0", "0.0", "-1.0" or empty. Integer spellings
// ("1", "0", "-1") are accepted as well.
LabelState parse_label(std::string_view text);
std::string_view format_label(LabelState state);

using LabelRow = std::array<LabelState, kNumPathologies>;

struct StudyRecord {
  std::string study_id;    // directory holding the study's images
  std::string patient_id;  // parent directory of the study directory
  std::optional<std::string> frontal_path;
  std::optional<std::string> lateral_path;
  LabelRow labels{};

  const std::optional<std::string>& path(View view) const {
    return view == View::kFrontal ? frontal_path : lateral_path;
  }
  friend bool operator==(const StudyRecord&, const StudyRecord&) = default;
};

// Rows are grouped by the parent directory of Path. Extra columns (the other
// CheXpert observations, Sex, Age, ...) are ignored.
std::vector<StudyRecord> parse_manifest(const std::filesystem::path& csv_path);
std::vector<StudyRecord> parse_manifest_text(std::string_view text, const std::string& source = "<memory>");

// One row per present view, frontal first.
void write_manifest(const std::vector<StudyRecord>& records, const std::filesystem::path& csv_path);
std::string format_manifest(const std::vector<StudyRecord>& records);

// Minimal CSV helpers shared by the report readers/writers.
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_escape(std::string_view field);

}  // namespace cxr
