// SPDX-License-Identifier: Apache-2.0
#include "pkt/dataio.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "pkt/error.hpp"

namespace pkt {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 5> kColumns = {"user_id", "item_id", "skill_ids", "correct",
                                                      "timestamp"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

bool is_null_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null" || s == "NULL" ||
         s == "None";
}

std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw DataError("line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

template <typename T>
std::optional<T> parse_int(std::string_view s) {
  T value{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

[[noreturn]] void row_error(std::size_t line_no, const std::string& what) {
  throw DataError("line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

bool RawRecord::complete() const noexcept {
  return !user_id.empty() && !skill_ids.empty() && response.has_value() && timestamp.has_value();
}

std::size_t InteractionSequence::valid_length() const noexcept {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<RawRecord> parse_interactions(std::istream& in, std::string_view source) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError(std::string(source) + ": empty input");
  ++line_no;
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  std::array<std::size_t, kColumns.size()> col{};
  {
    const auto header = split_csv_line(line, line_no);
    for (std::size_t c = 0; c < kColumns.size(); ++c) {
      auto it = std::find_if(header.begin(), header.end(),
                             [&](const std::string& h) { return trim(h) == kColumns[c]; });
      if (it == header.end()) {
        throw DataError(std::string(source) + ": header is missing column '" +
                        std::string(kColumns[c]) + "'");
      }
      col[c] = static_cast<std::size_t>(it - header.begin());
    }
  }
  const std::size_t width = *std::max_element(col.begin(), col.end()) + 1;

  std::vector<RawRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line, line_no);
    if (fields.size() < width) {
      row_error(line_no, "expected at least " + std::to_string(width) + " fields, got " +
                             std::to_string(fields.size()));
    }
    RawRecord r;
    r.line = line_no;

    const std::string_view user = trim(fields[col[0]]);
    if (!is_null_token(user)) r.user_id = std::string(user);

    const std::string_view item = trim(fields[col[1]]);
    if (!is_null_token(item)) r.question_id = std::string(item);

    const std::string_view skills = trim(fields[col[2]]);
    if (!is_null_token(skills)) {
      std::size_t pos = 0;
      while (pos <= skills.size()) {
        const std::size_t next = std::min(skills.find('_', pos), skills.size());
        const std::string_view token = trim(skills.substr(pos, next - pos));
        const auto id = parse_int<std::int64_t>(token);
        if (!id || *id < 0) row_error(line_no, "unknown skill token '" + std::string(token) + "'");
        r.skill_ids.push_back(*id);
        pos = next + 1;
      }
    }

    const std::string_view correct = trim(fields[col[3]]);
    if (!is_null_token(correct)) {
      const auto v = parse_int<int>(correct);
      if (!v || (*v != 0 && *v != 1)) {
        row_error(line_no, "correct must be 0 or 1, got '" + std::string(correct) + "'");
      }
      r.response = *v;
    }

    const std::string_view ts = trim(fields[col[4]]);
    if (!is_null_token(ts)) {
      const auto v = parse_int<std::int64_t>(ts);
      if (!v) row_error(line_no, "timestamp must be an integer, got '" + std::string(ts) + "'");
      r.timestamp = *v;
    }
    records.push_back(std::move(r));
  }

  // Group by user in order of first appearance, then stable-sort by time.
  std::unordered_map<std::string, std::size_t> group_of;
  std::vector<std::vector<RawRecord>> groups;
  for (RawRecord& r : records) {
    auto [it, inserted] = group_of.try_emplace(r.user_id, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(std::move(r));
  }
  std::vector<RawRecord> out;
  out.reserve(records.size());
  for (auto& g : groups) {
    std::stable_sort(g.begin(), g.end(), [](const RawRecord& a, const RawRecord& b) {
      if (!a.timestamp || !b.timestamp) return a.timestamp.has_value() && !b.timestamp;
      return *a.timestamp < *b.timestamp;
    });
    for (RawRecord& r : g) out.push_back(std::move(r));
  }
  return out;
}

std::vector<RawRecord> load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_interactions(in, path.string());
}

ProcessedDataset preprocess(std::span<const RawRecord> records, const PreprocessConfig& config) {
  struct Interaction {
    std::int64_t skill;
    int response;
  };
  std::vector<std::string> users;
  std::unordered_map<std::string, std::vector<Interaction>> by_user;
  for (const RawRecord& r : records) {
    if (!r.complete()) continue;
    auto [it, inserted] = by_user.try_emplace(r.user_id);
    if (inserted) users.push_back(r.user_id);
    for (std::int64_t s : r.skill_ids) it->second.push_back({s, *r.response});
  }

  std::vector<std::string> kept;
  std::size_t total = 0;
  for (const auto& u : users) {
    const std::size_t n = by_user[u].size();
    if (n >= config.min_records) {
      kept.push_back(u);
      total += n;
    }
  }
  if (kept.empty()) throw DataError("preprocess: no users left after filtering");

  std::size_t maxlen = 0;
  if (config.maxlen) {
    maxlen = *config.maxlen;
  } else {
    const double avg = static_cast<double>(total) / static_cast<double>(kept.size());
    maxlen = static_cast<std::size_t>(std::llround(avg));
  }
  if (maxlen < config.min_records) {
    throw DataError("preprocess: maxlen " + std::to_string(maxlen) + " is below the minimum of " +
                    std::to_string(config.min_records));
  }

  std::set<std::int64_t> present;
  for (const auto& u : kept) {
    const auto& xs = by_user[u];
    for (std::size_t i = 0; i < std::min(maxlen, xs.size()); ++i) present.insert(xs[i].skill);
  }
  ProcessedDataset data;
  data.skill_ids.assign(present.begin(), present.end());
  std::map<std::int64_t, int> index_of;
  for (std::size_t i = 0; i < data.skill_ids.size(); ++i) {
    index_of[data.skill_ids[i]] = static_cast<int>(i);
  }

  for (const auto& u : kept) {
    const auto& xs = by_user[u];
    InteractionSequence seq;
    seq.user_id = u;
    seq.original_length = xs.size();
    seq.skills.assign(maxlen, kPadValue);
    seq.responses.assign(maxlen, kPadValue);
    seq.mask.assign(maxlen, 0);
    for (std::size_t i = 0; i < std::min(maxlen, xs.size()); ++i) {
      seq.skills[i] = index_of.at(xs[i].skill);
      seq.responses[i] = xs[i].response;
      seq.mask[i] = 1;
    }
    data.sequences.push_back(std::move(seq));
  }
  data.stats = compute_stats(data.sequences);
  return data;
}

ResponseCounts count_responses(std::span<const InteractionSequence> sequences) {
  ResponseCounts c;
  for (const auto& s : sequences) {
    for (std::size_t i = 0; i < s.length(); ++i) {
      if (!s.mask[i]) continue;
      (s.responses[i] == 1 ? c.correct : c.wrong) += 1;
    }
  }
  return c;
}

DatasetStats compute_stats(std::span<const InteractionSequence> sequences) {
  if (sequences.empty()) throw DataError("compute_stats: no sequences");
  DatasetStats st;
  st.num_users = sequences.size();
  st.maxlen = sequences.front().length();
  std::set<int> skills;
  for (const auto& s : sequences) {
    st.num_records += s.original_length;
    for (std::size_t i = 0; i < s.length(); ++i) {
      if (s.mask[i]) skills.insert(s.skills[i]);
    }
  }
  st.num_skills = skills.size();
  const ResponseCounts c = count_responses(sequences);
  if (c.correct == 0 || c.wrong == 0) {
    throw DataError("compute_stats: every response is " +
                    std::string(c.correct == 0 ? "wrong" : "correct") +
                    "; imbalance ratio is undefined");
  }
  st.majority_class = c.correct >= c.wrong ? 1 : 0;
  const double hi = static_cast<double>(std::max(c.correct, c.wrong));
  const double lo = static_cast<double>(std::min(c.correct, c.wrong));
  st.imbalance_ratio = hi / lo;
  return st;
}

std::vector<std::size_t> encode_sequence(const InteractionSequence& seq, std::size_t num_skills) {
  std::vector<std::size_t> codes(seq.length());
  for (std::size_t i = 0; i < seq.length(); ++i) {
    if (!seq.mask[i]) {
      codes[i] = padding_code(num_skills);
      continue;
    }
    const int s = seq.skills[i];
    const int a = seq.responses[i];
    if (s < 0 || static_cast<std::size_t>(s) >= num_skills) {
      throw DataError("encode_sequence: skill index " + std::to_string(s) + " out of range [0, " +
                      std::to_string(num_skills) + ") for user " + seq.user_id);
    }
    if (a != 0 && a != 1) {
      throw DataError("encode_sequence: response " + std::to_string(a) + " is not 0 or 1");
    }
    codes[i] = static_cast<std::size_t>(s) + static_cast<std::size_t>(a) * num_skills;
  }
  return codes;
}

std::vector<std::size_t> FoldAssignment::train_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  }
  return out;
}

const std::vector<std::size_t>& FoldAssignment::validation_indices(std::size_t fold) const {
  return folds.at(fold);
}

FoldAssignment split_folds(std::size_t num_users, std::size_t k, double test_fraction,
                           std::uint64_t seed) {
  if (k < 2) throw DataError("split_folds: k must be at least 2");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw DataError("split_folds: test fraction must lie in (0, 1)");
  }
  if (num_users < k + 1) {
    throw DataError("split_folds: " + std::to_string(num_users) + " users cannot fill " +
                    std::to_string(k) + " folds plus a test set");
  }
  std::vector<std::size_t> order(num_users);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::size_t n_test = static_cast<std::size_t>(
      std::llround(static_cast<double>(num_users) * test_fraction));
  n_test = std::clamp<std::size_t>(n_test, 1, num_users - k);

  FoldAssignment fa;
  fa.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  const std::size_t pool = num_users - n_test;
  fa.folds.resize(k);
  std::size_t pos = n_test;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = pool / k + (f < pool % k ? 1 : 0);
    fa.folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return fa;
}

std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> indices,
                                                   std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw DataError("make_batches: batch size must be positive");
  std::vector<std::size_t> order(indices.begin(), indices.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json stats_json(const DatasetStats& s) {
  return json{{"num_users", s.num_users},         {"num_skills", s.num_skills},
              {"num_records", s.num_records},     {"maxlen", s.maxlen},
              {"imbalance_ratio", s.imbalance_ratio}, {"majority_class", s.majority_class}};
}

DatasetStats stats_from(const json& j) {
  DatasetStats s;
  s.num_users = j.at("num_users").get<std::size_t>();
  s.num_skills = j.at("num_skills").get<std::size_t>();
  s.num_records = j.at("num_records").get<std::size_t>();
  s.maxlen = j.at("maxlen").get<std::size_t>();
  s.imbalance_ratio = j.at("imbalance_ratio").get<double>();
  s.majority_class = j.at("majority_class").get<int>();
  return s;
}

}  // namespace

std::string stats_to_json(const DatasetStats& stats) { return stats_json(stats).dump(2); }

DatasetStats stats_from_json(std::string_view text) {
  try {
    return stats_from(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("stats JSON: ") + e.what());
  }
}

void save_processed(const ProcessedDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json seqs = json::array();
  for (const auto& s : data.sequences) {
    seqs.push_back({{"user_id", s.user_id},
                    {"original_length", s.original_length},
                    {"skills", s.skills},
                    {"responses", s.responses}});
  }
  const json doc{{"format", "pkt-sequences"},
                 {"version", 1},
                 {"maxlen", data.maxlen()},
                 {"skill_ids", data.skill_ids},
                 {"sequences", std::move(seqs)}};
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name);
    if (!(out << text << '\n')) throw DataError("cannot write " + (dir / name).string());
  };
  write("sequences.json", doc.dump());
  write("stats.json", stats_to_json(data.stats));
}

ProcessedDataset load_processed(const std::filesystem::path& dir) {
  std::ifstream in(dir / "sequences.json");
  if (!in) throw DataError("cannot open " + (dir / "sequences.json").string());
  ProcessedDataset data;
  try {
    const json doc = json::parse(in);
    const auto maxlen = doc.at("maxlen").get<std::size_t>();
    data.skill_ids = doc.at("skill_ids").get<std::vector<std::int64_t>>();
    for (const auto& js : doc.at("sequences")) {
      InteractionSequence s;
      s.user_id = js.at("user_id").get<std::string>();
      s.original_length = js.at("original_length").get<std::size_t>();
      s.skills = js.at("skills").get<std::vector<int>>();
      s.responses = js.at("responses").get<std::vector<int>>();
      if (s.skills.size() != maxlen || s.responses.size() != maxlen) {
        throw DataError("sequences.json: user " + s.user_id + " does not have length " +
                        std::to_string(maxlen));
      }
      s.mask.resize(maxlen);
      for (std::size_t i = 0; i < maxlen; ++i) s.mask[i] = s.skills[i] != kPadValue ? 1 : 0;
      data.sequences.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("sequences.json: ") + e.what());
  }
  data.stats = compute_stats(data.sequences);
  return data;
}

void write_interactions_csv(std::span<const RawRecord> records, std::ostream& out) {
  out << "user_id,item_id,skill_ids,correct,timestamp\n";
  for (const RawRecord& r : records) {
    out << r.user_id << ',' << r.question_id.value_or("") << ',';
    for (std::size_t i = 0; i < r.skill_ids.size(); ++i) {
      if (i > 0) out << '_';
      out << r.skill_ids[i];
    }
    out << ',';
    if (r.response) out << *r.response;
    out << ',';
    if (r.timestamp) out << *r.timestamp;
    out << '\n';
  }
}

}  // namespace pkt
