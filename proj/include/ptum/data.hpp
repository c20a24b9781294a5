// SPDX-License-Identifier: Apache-2.0
//
// Behavior-log ingestion: tokenization, vocabulary construction, JSONL
// parsing, truncation and batch padding.

#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace ptum {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;

// One user action: a short text title tokenized to ids, plus its 0-based
// index in the user's stored sequence.
struct Behavior {
    std::vector<int> tokens;
    int position = 0;
};

struct UserRecord {
    std::string user_id;
    std::vector<Behavior> behaviors;              // ordered by occurrence
    std::map<std::string, int> labels;            // task name -> class index
};

// One ad impression; the user's behaviors live in a separate behavior log.
struct CtrImpression {
    std::string user_id;
    std::vector<int> ad_title;
    std::vector<int> ad_desc;
    int click = 0;
};

class Vocabulary {
public:
    Vocabulary() = default;

    // Tokens with corpus frequency >= min_frequency get ids starting at 2,
    // assigned by descending frequency with lexicographic tie-break.
    static Vocabulary build(const std::map<std::string, std::uint64_t>& frequencies,
                            std::uint64_t min_frequency);

    int id_of(const std::string& token) const;    // kUnkId when absent
    const std::string& token_of(int id) const;
    std::size_t size() const { return tokens_.size(); }  // excludes PAD/UNK
    std::size_t table_rows() const { return tokens_.size() + 2; }
    std::uint64_t min_frequency() const { return min_frequency_; }

    void save(const std::filesystem::path& path) const;  // one token per line
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<std::string> tokens_;             // index + 2 == id
    std::unordered_map<std::string, int> ids_;
    std::uint64_t min_frequency_ = 1;
};

// Whitespace split + ASCII lowercase.
std::vector<std::string> tokenize(const std::string& text);

// Token frequencies over one or more JSONL files. Lines contribute their
// "behaviors" strings and, when present, "ad_title"/"ad_desc".
std::map<std::string, std::uint64_t> count_tokens(
    const std::vector<std::filesystem::path>& paths);

Vocabulary build_vocab(const std::vector<std::filesystem::path>& paths,
                       std::uint64_t min_frequency);

struct IngestLimits {
    std::size_t max_title_len = 30;   // first tokens of a title kept
    std::size_t max_behaviors = 100;  // most recent behaviors kept
};

struct IngestStats {
    std::size_t records = 0;
    std::size_t rejected_empty = 0;   // records with no usable behavior
    std::size_t dropped_titles = 0;   // behaviors whose title tokenized empty
};

// One JSON object per line: {"user_id": str, "behaviors": [str, ...],
// "labels": {...}?}. Malformed lines raise with the 1-based line number.
std::vector<UserRecord> ingest_jsonl(const std::filesystem::path& path, const Vocabulary& vocab,
                                     const IngestLimits& limits, IngestStats* stats = nullptr);
std::vector<UserRecord> ingest_jsonl(std::istream& in, const std::string& source_name,
                                     const Vocabulary& vocab, const IngestLimits& limits,
                                     IngestStats* stats = nullptr);

// {"user_id": str, "ad_title": str, "ad_desc": str, "click": 0|1}
std::vector<CtrImpression> ingest_ctr_jsonl(const std::filesystem::path& path,
                                            const Vocabulary& vocab, const IngestLimits& limits);
std::vector<CtrImpression> ingest_ctr_jsonl(std::istream& in, const std::string& source_name,
                                            const Vocabulary& vocab, const IngestLimits& limits);

// Token frequencies over in-memory JSONL content.
std::map<std::string, std::uint64_t> count_tokens(std::istream& in,
                                                  const std::string& source_name);

// Dense padded view of a batch of records. ids is B x M x L row-major with
// PAD fill; masks hold 1.0 where real content exists; positions carries each
// real behavior's stored index (0 in padded slots).
struct PaddedBatch {
    std::size_t batch = 0, max_behaviors = 0, max_title_len = 0;
    std::vector<int> ids;
    std::vector<int> positions;        // B x M
    std::vector<double> behavior_mask; // B x M
    std::vector<double> token_mask;    // B x M x L
};

PaddedBatch pad_batch(const std::vector<UserRecord>& records, std::size_t max_behaviors,
                      std::size_t max_title_len);

// Inverse of pad_batch for records that fit the limits (labels excluded).
std::vector<UserRecord> unpad_batch(const PaddedBatch& batch);

}  // namespace ptum
