#include "cxr/data/manifest.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "cxr/common/error.hpp"

namespace cxr {

std::string_view to_string(View view) { return view == View::kFrontal ? "Frontal" : "Lateral"; }

View parse_view(std::string_view text) {
  if (text == "Frontal" || text == "frontal") return View::kFrontal;
  if (text == "Lateral" || text == "lateral") return View::kLateral;
  fail(ErrorKind::kParse, "unknown view '" + std::string(text) + "'");
}

LabelState parse_label(std::string_view text) {
  if (text.empty()) return LabelState::kUnmentioned;
  if (text == "1.0" || text == "1") return LabelState::kPositive;
  if (text == "0.0" || text == "0") return LabelState::kNegative;
  if (text == "-1.0" || text == "-1") return LabelState::kUncertain;
  fail(ErrorKind::kParse, "unparseable label value '" + std::string(text) + "'");
}

std::string_view format_label(LabelState state) {
  switch (state) {
    case LabelState::kPositive: return "1.0";
    case LabelState::kNegative: return "0.0";
    case LabelState::kUncertain: return "-1.0";
    case LabelState::kUnmentioned: return "";
  }
  return "";
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

namespace {

std::string parent_of(const std::string& path) {
  const auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string() : path.substr(0, pos);
}

std::string last_component(const std::string& path) {
  const auto pos = path.find_last_of('/');
  return pos == std::string::npos ? path : path.substr(pos + 1);
}

}  // namespace

std::vector<StudyRecord> parse_manifest_text(std::string_view text, const std::string& source) {
  std::istringstream in{std::string(text)};
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kParse, source + ": empty manifest");
  const auto header = split_csv_line(line);
  auto column = [&](std::string_view name) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    fail(ErrorKind::kParse, source + ": missing required column '" + std::string(name) + "'");
  };
  const std::size_t path_col = column("Path");
  const std::size_t view_col = column("Frontal/Lateral");
  std::array<std::size_t, kNumPathologies> label_cols{};
  for (std::size_t k = 0; k < kNumPathologies; ++k) label_cols[k] = column(kPathologyNames[k]);

  std::vector<StudyRecord> records;
  std::map<std::string, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    const std::string where = source + ":" + std::to_string(line_no);
    require(fields.size() >= header.size(), ErrorKind::kParse,
            where + ": expected " + std::to_string(header.size()) + " fields, got " +
                std::to_string(fields.size()));
    const std::string& path = fields[path_col];
    require(!path.empty(), ErrorKind::kParse, where + ": empty Path");
    LabelRow labels{};
    for (std::size_t k = 0; k < kNumPathologies; ++k) {
      try {
        labels[k] = parse_label(fields[label_cols[k]]);
      } catch (const Error& e) {
        fail(ErrorKind::kParse, where + ": " + e.what());
      }
    }
    View view;
    try {
      view = parse_view(fields[view_col]);
    } catch (const Error& e) {
      fail(ErrorKind::kParse, where + ": " + e.what());
    }

    const std::string study = parent_of(path);
    auto [it, inserted] = index.emplace(study, records.size());
    if (inserted) {
      StudyRecord record;
      record.study_id = study;
      record.patient_id = last_component(parent_of(study));
      record.labels = labels;
      records.push_back(std::move(record));
    } else {
      require(records[it->second].labels == labels, ErrorKind::kParse,
              where + ": labels differ from an earlier row of study " + study);
    }
    StudyRecord& record = records[it->second];
    auto& slot = view == View::kFrontal ? record.frontal_path : record.lateral_path;
    // Studies with several images of one view keep the first.
    if (!slot) slot = path;
  }
  return records;
}

std::vector<StudyRecord> parse_manifest(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open manifest " + csv_path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest_text(buffer.str(), csv_path.string());
}

std::string format_manifest(const std::vector<StudyRecord>& records) {
  std::ostringstream out;
  out << "Path,Frontal/Lateral";
  for (auto name : kPathologyNames) out << ',' << name;
  out << '\n';
  auto row = [&](const std::string& path, View view, const StudyRecord& r) {
    out << csv_escape(path) << ',' << to_string(view);
    for (auto state : r.labels) out << ',' << format_label(state);
    out << '\n';
  };
  for (const auto& r : records) {
    require(r.frontal_path || r.lateral_path, ErrorKind::kInvalidArgument,
            "study " + r.study_id + " has no image");
    if (r.frontal_path) row(*r.frontal_path, View::kFrontal, r);
    if (r.lateral_path) row(*r.lateral_path, View::kLateral, r);
  }
  return out.str();
}

void write_manifest(const std::vector<StudyRecord>& records, const std::filesystem::path& csv_path) {
  std::ofstream out(csv_path, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write manifest " + csv_path.string());
  out << format_manifest(records);
  require(out.good(), ErrorKind::kIo, "failed writing manifest " + csv_path.string());
}

}  // namespace cxr
