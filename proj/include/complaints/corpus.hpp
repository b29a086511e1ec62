#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "complaints/error.hpp"
#include "complaints/log.hpp"

namespace complaints {

enum class Domain {
  Food,
  Apparel,
  Retail,
  Cars,
  Services,
  Software,
  Transport,
  Electronics,
  Other
};

inline constexpr std::size_t kDomainCount = 9;

inline constexpr std::array<Domain, kDomainCount> kAllDomains = {
    Domain::Food,     Domain::Apparel,   Domain::Retail,
    Domain::Cars,     Domain::Services,  Domain::Software,
    Domain::Transport, Domain::Electronics, Domain::Other};

inline constexpr std::array<std::string_view, kDomainCount> kDomainNames = {
    "Food",     "Apparel",   "Retail",      "Cars", "Services",
    "Software", "Transport", "Electronics", "Other"};

inline std::string_view to_string(Domain d) {
  return kDomainNames[static_cast<std::size_t>(d)];
}

/// Case-sensitive lookup of one of the nine canonical domain names.
inline std::optional<Domain> parse_domain(std::string_view name) {
  for (std::size_t i = 0; i < kDomainCount; ++i)
    if (kDomainNames[i] == name) return kAllDomains[i];
  return std::nullopt;
}

enum class Label { non_complaint = 0, complaint = 1 };

inline std::string_view to_string(Label l) {
  return l == Label::complaint ? "complaint" : "non_complaint";
}

/// Accepts the canonical names plus the 1/0 encoding used by some CSV dumps.
inline std::optional<Label> parse_label(std::string_view s) {
  if (s == "complaint" || s == "1") return Label::complaint;
  if (s == "non_complaint" || s == "0") return Label::non_complaint;
  return std::nullopt;
}

enum class Provenance { gold, distant };

struct LabeledPost {
  std::string id;
  std::string text;
  Label label = Label::non_complaint;
  Domain domain = Domain::Other;
  Provenance provenance = Provenance::gold;

  bool is_complaint() const { return label == Label::complaint; }
  friend bool operator==(const LabeledPost&, const LabeledPost&) = default;
};

using Posts = std::vector<LabeledPost>;

struct ClassCounts {
  std::size_t complaints = 0;
  std::size_t non_complaints = 0;

  std::size_t total() const { return complaints + non_complaints; }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

struct CorpusStats {
  std::map<Domain, ClassCounts> per_domain;
  ClassCounts totals;
  double complaint_ratio = 0.0;
};

struct DistantCorpusSpec {
  std::filesystem::path complaint_path;
  std::filesystem::path non_complaint_path;
  std::size_t expected_complaints = 18218;
  std::size_t expected_non_complaints = 18218;
};

enum class CorpusFormat { csv, jsonl };

namespace detail {

inline bool is_blank(std::string_view s) {
  return s.find_first_not_of(" \t\r\n\f\v") == std::string_view::npos;
}

inline std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

// RFC 4180 reader: quoted fields may contain the delimiter, doubled quotes
// and newlines.
class CsvReader {
 public:
  CsvReader(std::istream& in, char delimiter) : in_(in), delim_(delimiter) {}

  bool next(std::vector<std::string>& fields) {
    fields.clear();
    std::string field;
    bool in_quotes = false;
    bool any = false;
    char c;
    while (in_.get(c)) {
      any = true;
      if (in_quotes) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get(c);
            field.push_back('"');
          } else {
            in_quotes = false;
          }
        } else {
          field.push_back(c);
        }
      } else if (c == '"' && field.empty()) {
        in_quotes = true;
      } else if (c == delim_) {
        fields.push_back(std::move(field));
        field.clear();
      } else if (c == '\n') {
        fields.push_back(strip_cr(std::move(field)));
        return true;
      } else {
        field.push_back(c);
      }
    }
    if (!any) return false;
    fields.push_back(strip_cr(std::move(field)));
    return true;
  }

 private:
  std::istream& in_;
  char delim_;
};

inline char sniff_delimiter(const std::string& header_line) {
  std::size_t tabs = 0, commas = 0;
  for (char c : header_line) {
    tabs += c == '\t';
    commas += c == ',';
  }
  return tabs > commas ? '\t' : ',';
}

inline LabeledPost make_gold_post(std::size_t index, std::string id,
                                  std::string text, const std::string& label,
                                  const std::string& domain) {
  if (is_blank(text))
    throw ValidationError(index,
                          "record " + std::to_string(index) + ": empty text");
  auto l = parse_label(label);
  if (!l)
    throw ValidationError(index, "record " + std::to_string(index) +
                                     ": unknown label '" + label + "'");
  auto d = parse_domain(domain);
  if (!d)
    throw ValidationError(index, "record " + std::to_string(index) +
                                     ": unknown domain '" + domain + "'");
  if (id.empty()) id = "row-" + std::to_string(index);
  return LabeledPost{std::move(id), std::move(text), *l, *d,
                     Provenance::gold};
}

inline Posts load_gold_csv(std::istream& in) {
  Posts posts;
  std::string header_line;
  if (!std::getline(in, header_line)) return posts;
  header_line = strip_cr(header_line);
  if (is_blank(header_line)) return posts;
  const char delim = sniff_delimiter(header_line);

  std::istringstream header_stream(header_line + "\n");
  std::vector<std::string> header;
  CsvReader(header_stream, delim).next(header);
  auto column = [&](const std::string& name,
                    bool required) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    if (required)
      throw SchemaError(name, "missing column '" + name + "'");
    return std::nullopt;
  };
  const auto text_col = *column("text", true);
  const auto label_col = *column("label", true);
  const auto domain_col = *column("domain", true);
  const auto id_col = column("id", false);

  CsvReader reader(in, delim);
  std::vector<std::string> row;
  std::size_t index = 0;
  while (reader.next(row)) {
    if (row.size() == 1 && is_blank(row[0])) continue;
    auto field = [&](std::size_t col) -> std::string {
      return col < row.size() ? row[col] : std::string{};
    };
    posts.push_back(make_gold_post(index, id_col ? field(*id_col) : "",
                                   field(text_col), field(label_col),
                                   field(domain_col)));
    ++index;
  }
  return posts;
}

inline Posts load_gold_jsonl(std::istream& in) {
  Posts posts;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (is_blank(line)) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(index, "record " + std::to_string(index) +
                                       ": malformed JSON: " + e.what());
    }
    auto field = [&](const char* key, bool required) -> std::string {
      auto it = record.find(key);
      if (it == record.end() || it->is_null()) {
        if (required)
          throw SchemaError(key, "record " + std::to_string(index) +
                                     ": missing field '" + key + "'");
        return {};
      }
      if (it->is_string()) return it->get<std::string>();
      return it->dump();
    };
    posts.push_back(make_gold_post(index, field("id", false),
                                   field("text", true), field("label", true),
                                   field("domain", true)));
    ++index;
  }
  return posts;
}

inline std::ifstream open_or_throw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return in;
}

// One post per line (blank lines skipped); .jsonl files contribute their
// "text" field and optional "id".
inline Posts load_distant_file(const std::filesystem::path& path, Label label,
                               std::string_view id_prefix) {
  auto in = open_or_throw(path);
  const bool jsonl = path.extension() == ".jsonl";
  Posts posts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (is_blank(line)) continue;
    LabeledPost post;
    post.id = std::string(id_prefix) + std::to_string(line_no);
    if (jsonl) {
      auto record = nlohmann::json::parse(line, nullptr, false);
      if (record.is_discarded() || !record.contains("text"))
        throw ValidationError(line_no, path.string() + ":" +
                                           std::to_string(line_no) +
                                           ": expected an object with 'text'");
      post.text = record["text"].get<std::string>();
      if (record.contains("id") && record["id"].is_string())
        post.id = record["id"].get<std::string>();
      if (is_blank(post.text)) continue;
    } else {
      post.text = std::move(line);
    }
    post.label = label;
    post.domain = Domain::Other;
    post.provenance = Provenance::distant;
    posts.push_back(std::move(post));
  }
  return posts;
}

}  // namespace detail

/// Loads the annotated corpus. Records keep file order and are not
/// deduplicated or normalized. CSV files need a header row; the delimiter
/// (tab or comma) is sniffed from it. JSON-lines records carry
/// {id, text, label, domain}.
inline Posts load_gold_corpus(const std::filesystem::path& path,
                              CorpusFormat format) {
  auto in = detail::open_or_throw(path);
  return format == CorpusFormat::csv ? detail::load_gold_csv(in)
                                     : detail::load_gold_jsonl(in);
}

inline CorpusFormat format_from_extension(const std::filesystem::path& path) {
  return path.extension() == ".jsonl" || path.extension() == ".json"
             ? CorpusFormat::jsonl
             : CorpusFormat::csv;
}

inline Posts load_gold_corpus(const std::filesystem::path& path) {
  return load_gold_corpus(path, format_from_extension(path));
}

/// Complaint posts followed by non-complaint posts, all with
/// provenance=distant and domain=Other. Count mismatches against the
/// expected sizes only warn: the upstream collection shrinks as tweets
/// are deleted.
inline Posts load_distant_corpus(const DistantCorpusSpec& spec) {
  if (!std::filesystem::exists(spec.complaint_path))
    throw IoError("distant complaint file not found: '" +
                  spec.complaint_path.string() + "'");
  if (!std::filesystem::exists(spec.non_complaint_path))
    throw IoError("distant non-complaint file not found: '" +
                  spec.non_complaint_path.string() + "'");
  Posts posts = detail::load_distant_file(spec.complaint_path,
                                          Label::complaint, "distant-c-");
  const std::size_t complaints = posts.size();
  Posts negatives = detail::load_distant_file(
      spec.non_complaint_path, Label::non_complaint, "distant-n-");
  const std::size_t non_complaints = negatives.size();
  posts.insert(posts.end(), std::make_move_iterator(negatives.begin()),
               std::make_move_iterator(negatives.end()));
  if (complaints != spec.expected_complaints ||
      non_complaints != spec.expected_non_complaints) {
    log::warn("distant corpus has {} complaint / {} non-complaint posts, "
              "expected {} / {}",
              complaints, non_complaints, spec.expected_complaints,
              spec.expected_non_complaints);
  }
  return posts;
}

inline CorpusStats compute_stats(const Posts& posts) {
  if (posts.empty()) throw Error("no posts");
  CorpusStats stats;
  for (Domain d : kAllDomains) stats.per_domain[d] = {};
  for (const auto& p : posts) {
    auto& counts = stats.per_domain[p.domain];
    if (p.is_complaint()) {
      ++counts.complaints;
      ++stats.totals.complaints;
    } else {
      ++counts.non_complaints;
      ++stats.totals.non_complaints;
    }
  }
  stats.complaint_ratio = static_cast<double>(stats.totals.complaints) /
                          static_cast<double>(stats.totals.total());
  return stats;
}

/// Splits gold posts into the nine domain buckets, preserving order.
inline std::map<Domain, Posts> partition_by_domain(const Posts& posts) {
  std::map<Domain, Posts> buckets;
  for (Domain d : kAllDomains) buckets[d];
  for (std::size_t i = 0; i < posts.size(); ++i) {
    if (posts[i].provenance != Provenance::gold)
      throw UsageError("partition_by_domain: post " + std::to_string(i) +
                       " ('" + posts[i].id + "') is distant-provenance");
    buckets[posts[i].domain].push_back(posts[i]);
  }
  return buckets;
}

/// Canonical JSON-lines serialization of a gold post.
inline std::string to_jsonl(const LabeledPost& p) {
  nlohmann::json j = {{"id", p.id},
                      {"text", p.text},
                      {"label", std::string(to_string(p.label))},
                      {"domain", std::string(to_string(p.domain))}};
  return j.dump();
}

}  // namespace complaints
