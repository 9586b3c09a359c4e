// SPDX-License-Identifier: Apache-2.0
//
// Interaction-log ingestion, preprocessing, dataset statistics, interaction
// encoding and user-level fold assignment.
//
// Canonical input is a UTF-8 CSV with header
//   user_id,item_id,skill_ids,correct,timestamp
// where skill_ids is one integer or several joined by '_' (e.g. "12_47").
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pkt {

inline constexpr int kPadValue = -1;

struct RawRecord {
  std::string user_id;                       // empty when null
  std::optional<std::string> question_id;
  std::vector<std::int64_t> skill_ids;       // empty when null
  std::optional<int> response;
  std::optional<std::int64_t> timestamp;
  std::size_t line = 0;                      // 1-based source line, 0 if synthetic

  /// True when no required attribute is null.
  bool complete() const noexcept;
};

/// One student's interactions after multi-skill splitting, truncated or
/// padded to a common length. Padded positions hold kPadValue.
struct InteractionSequence {
  std::string user_id;
  std::vector<int> skills;
  std::vector<int> responses;
  std::vector<std::uint8_t> mask;
  std::size_t original_length = 0;

  std::size_t length() const noexcept { return skills.size(); }
  /// Number of unmasked positions.
  std::size_t valid_length() const noexcept;
};

struct DatasetStats {
  std::size_t num_users = 0;
  std::size_t num_skills = 0;
  std::size_t num_records = 0;
  std::size_t maxlen = 0;
  double imbalance_ratio = 1.0;
  int majority_class = 1;

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

struct PreprocessConfig {
  /// Overrides the rounded average sequence length.
  std::optional<std::size_t> maxlen;
  std::size_t min_records = 3;
};

struct ProcessedDataset {
  std::vector<InteractionSequence> sequences;
  /// Raw skill id for each dense skill index.
  std::vector<std::int64_t> skill_ids;
  DatasetStats stats;

  std::size_t num_skills() const noexcept { return skill_ids.size(); }
  std::size_t maxlen() const noexcept { return stats.maxlen; }
};

/// Parse canonical CSV. Records come back grouped by user (first-appearance
/// order) and stably sorted by timestamp within each user. Throws DataError
/// naming the line for malformed rows.
std::vector<RawRecord> parse_interactions(std::istream& in, std::string_view source = "<stream>");
std::vector<RawRecord> load_interactions(const std::filesystem::path& path);

/// Null filtering, multi-skill splitting, short-user removal, then
/// truncation (keeping the earliest interactions) or -1 padding to maxlen.
ProcessedDataset preprocess(std::span<const RawRecord> records, const PreprocessConfig& config = {});

/// Statistics over unmasked positions. Throws DataError on an empty list or
/// when every response has the same value.
DatasetStats compute_stats(std::span<const InteractionSequence> sequences);

/// Count of responses equal to 1 and 0 over unmasked positions.
struct ResponseCounts {
  std::size_t correct = 0;
  std::size_t wrong = 0;
};
ResponseCounts count_responses(std::span<const InteractionSequence> sequences);

/// Interaction codes: skill + response * num_skills, and 2 * num_skills for
/// padded positions.
std::vector<std::size_t> encode_sequence(const InteractionSequence& seq, std::size_t num_skills);
inline std::size_t padding_code(std::size_t num_skills) noexcept { return 2 * num_skills; }

/// User-level split: a held-out test set plus k disjoint folds covering the rest.
/// Entries are indices into the sequence list.
struct FoldAssignment {
  std::vector<std::size_t> test;
  std::vector<std::vector<std::size_t>> folds;

  std::size_t k() const noexcept { return folds.size(); }
  std::vector<std::size_t> train_indices(std::size_t fold) const;
  const std::vector<std::size_t>& validation_indices(std::size_t fold) const;
};

FoldAssignment split_folds(std::size_t num_users, std::size_t k, double test_fraction,
                           std::uint64_t seed);

/// Shuffle `indices` with `seed` and cut into batches of at most batch_size.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> indices,
                                                   std::size_t batch_size, std::uint64_t seed);

// Serialization of processed data and statistics.
std::string stats_to_json(const DatasetStats& stats);
DatasetStats stats_from_json(std::string_view text);
void save_processed(const ProcessedDataset& data, const std::filesystem::path& dir);
ProcessedDataset load_processed(const std::filesystem::path& dir);
void write_interactions_csv(std::span<const RawRecord> records, std::ostream& out);

}  // namespace pkt
