// SPDX-License-Identifier: Apache-2.0

#include "ptum/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ptum {

using nlohmann::json;

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string current;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) {
                out.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

Vocabulary Vocabulary::build(const std::map<std::string, std::uint64_t>& frequencies,
                             std::uint64_t min_frequency) {
    std::vector<std::pair<std::string, std::uint64_t>> kept;
    for (const auto& [token, freq] : frequencies)
        if (freq >= min_frequency) kept.emplace_back(token, freq);
    // Descending frequency, lexicographic tie-break: deterministic ids.
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    v.min_frequency_ = min_frequency;
    v.tokens_.reserve(kept.size());
    for (const auto& [token, freq] : kept) {
        v.ids_[token] = static_cast<int>(v.tokens_.size()) + 2;
        v.tokens_.push_back(token);
    }
    return v;
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    static const std::string pad = "<pad>", unk = "<unk>";
    if (id == kPadId) return pad;
    if (id == kUnkId) return unk;
    const std::size_t idx = static_cast<std::size_t>(id) - 2;
    if (id < 0 || idx >= tokens_.size())
        throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
    return tokens_[idx];
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ostringstream out;
    for (const auto& t : tokens_) out << t << '\n';
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write vocabulary to " + path.string());
    f << out.str();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read vocabulary from " + path.string());
    Vocabulary v;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        v.ids_[line] = static_cast<int>(v.tokens_.size()) + 2;
        v.tokens_.push_back(line);
    }
    return v;
}

namespace {

void count_line_tokens(const json& j, std::map<std::string, std::uint64_t>& counts) {
    auto add = [&](const std::string& text) {
        for (const auto& t : tokenize(text)) ++counts[t];
    };
    if (j.contains("behaviors"))
        for (const auto& b : j.at("behaviors")) add(b.get<std::string>());
    if (j.contains("ad_title")) add(j.at("ad_title").get<std::string>());
    if (j.contains("ad_desc")) add(j.at("ad_desc").get<std::string>());
}

[[noreturn]] void parse_error(const std::string& source, std::size_t line_no,
                              const std::string& what) {
    throw std::runtime_error(source + ":" + std::to_string(line_no) + ": " + what);
}

json parse_line(const std::string& source, std::size_t line_no, const std::string& line) {
    json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) parse_error(source, line_no, "malformed JSON object");
    return j;
}

std::vector<int> tokens_to_ids(const std::string& text, const Vocabulary& vocab,
                               std::size_t max_title_len) {
    std::vector<int> ids;
    for (const auto& t : tokenize(text)) {
        if (ids.size() >= max_title_len) break;
        ids.push_back(vocab.id_of(t));
    }
    return ids;
}

}  // namespace

std::map<std::string, std::uint64_t> count_tokens(std::istream& in,
                                                  const std::string& source_name) {
    std::map<std::string, std::uint64_t> counts;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        count_line_tokens(parse_line(source_name, line_no, line), counts);
    }
    return counts;
}

std::map<std::string, std::uint64_t> count_tokens(
    const std::vector<std::filesystem::path>& paths) {
    if (paths.empty()) throw std::invalid_argument("count_tokens: no corpus files");
    std::map<std::string, std::uint64_t> counts;
    for (const auto& path : paths) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open corpus file " + path.string());
        for (auto& [token, n] : count_tokens(f, path.string())) counts[token] += n;
    }
    if (counts.empty()) throw std::runtime_error("count_tokens: empty corpus");
    return counts;
}

Vocabulary build_vocab(const std::vector<std::filesystem::path>& paths,
                       std::uint64_t min_frequency) {
    return Vocabulary::build(count_tokens(paths), min_frequency);
}

std::vector<UserRecord> ingest_jsonl(const std::filesystem::path& path, const Vocabulary& vocab,
                                     const IngestLimits& limits, IngestStats* stats) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return ingest_jsonl(f, path.string(), vocab, limits, stats);
}

std::vector<UserRecord> ingest_jsonl(std::istream& in, const std::string& source_name,
                                     const Vocabulary& vocab, const IngestLimits& limits,
                                     IngestStats* stats) {
    std::vector<UserRecord> records;
    IngestStats local;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = parse_line(source_name, line_no, line);
        if (!j.contains("user_id") || !j.contains("behaviors") || !j.at("behaviors").is_array())
            parse_error(source_name, line_no, "expected fields user_id and behaviors");

        UserRecord rec;
        rec.user_id = j.at("user_id").get<std::string>();
        for (const auto& b : j.at("behaviors")) {
            std::vector<int> ids = tokens_to_ids(b.get<std::string>(), vocab, limits.max_title_len);
            if (ids.empty()) {
                ++local.dropped_titles;
                continue;
            }
            rec.behaviors.push_back({std::move(ids), 0});
        }
        if (rec.behaviors.empty()) {
            ++local.rejected_empty;
            continue;
        }
        // Keep the most recent behaviors, then re-index positions 0..m-1.
        if (rec.behaviors.size() > limits.max_behaviors)
            rec.behaviors.erase(rec.behaviors.begin(),
                                rec.behaviors.end() - static_cast<std::ptrdiff_t>(limits.max_behaviors));
        for (std::size_t i = 0; i < rec.behaviors.size(); ++i)
            rec.behaviors[i].position = static_cast<int>(i);

        if (j.contains("labels")) {
            for (const auto& [key, value] : j.at("labels").items())
                rec.labels[key] = value.get<int>();
        }
        records.push_back(std::move(rec));
        ++local.records;
    }
    if (stats) *stats = local;
    return records;
}

std::vector<CtrImpression> ingest_ctr_jsonl(const std::filesystem::path& path,
                                            const Vocabulary& vocab, const IngestLimits& limits) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    return ingest_ctr_jsonl(f, path.string(), vocab, limits);
}

std::vector<CtrImpression> ingest_ctr_jsonl(std::istream& in, const std::string& source_name,
                                            const Vocabulary& vocab, const IngestLimits& limits) {
    std::vector<CtrImpression> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = parse_line(source_name, line_no, line);
        if (!j.contains("user_id") || !j.contains("ad_title") || !j.contains("click"))
            parse_error(source_name, line_no, "expected fields user_id, ad_title, click");
        CtrImpression imp;
        imp.user_id = j.at("user_id").get<std::string>();
        imp.ad_title = tokens_to_ids(j.at("ad_title").get<std::string>(), vocab, limits.max_title_len);
        if (j.contains("ad_desc"))
            imp.ad_desc = tokens_to_ids(j.at("ad_desc").get<std::string>(), vocab, limits.max_title_len);
        imp.click = j.at("click").get<int>();
        if (imp.click != 0 && imp.click != 1) parse_error(source_name, line_no, "click must be 0 or 1");
        if (imp.ad_title.empty() && imp.ad_desc.empty())
            parse_error(source_name, line_no, "ad has no usable text");
        out.push_back(std::move(imp));
    }
    return out;
}

PaddedBatch pad_batch(const std::vector<UserRecord>& records, std::size_t max_behaviors,
                      std::size_t max_title_len) {
    if (records.empty()) throw std::invalid_argument("pad_batch: empty batch");
    PaddedBatch b;
    b.batch = records.size();
    b.max_behaviors = max_behaviors;
    b.max_title_len = max_title_len;
    b.ids.assign(b.batch * max_behaviors * max_title_len, kPadId);
    b.positions.assign(b.batch * max_behaviors, 0);
    b.behavior_mask.assign(b.batch * max_behaviors, 0.0);
    b.token_mask.assign(b.batch * max_behaviors * max_title_len, 0.0);
    for (std::size_t u = 0; u < records.size(); ++u) {
        const auto& rec = records[u];
        if (rec.behaviors.size() > max_behaviors)
            throw std::invalid_argument("pad_batch: record exceeds max_behaviors");
        for (std::size_t m = 0; m < rec.behaviors.size(); ++m) {
            const auto& beh = rec.behaviors[m];
            if (beh.tokens.size() > max_title_len)
                throw std::invalid_argument("pad_batch: title exceeds max_title_len");
            b.behavior_mask[u * max_behaviors + m] = 1.0;
            b.positions[u * max_behaviors + m] = beh.position;
            const std::size_t base = (u * max_behaviors + m) * max_title_len;
            for (std::size_t t = 0; t < beh.tokens.size(); ++t) {
                b.ids[base + t] = beh.tokens[t];
                b.token_mask[base + t] = 1.0;
            }
        }
    }
    return b;
}

std::vector<UserRecord> unpad_batch(const PaddedBatch& batch) {
    std::vector<UserRecord> out(batch.batch);
    for (std::size_t u = 0; u < batch.batch; ++u) {
        for (std::size_t m = 0; m < batch.max_behaviors; ++m) {
            if (batch.behavior_mask[u * batch.max_behaviors + m] == 0.0) continue;
            Behavior beh;
            beh.position = batch.positions[u * batch.max_behaviors + m];
            const std::size_t base = (u * batch.max_behaviors + m) * batch.max_title_len;
            for (std::size_t t = 0; t < batch.max_title_len; ++t)
                if (batch.token_mask[base + t] != 0.0) beh.tokens.push_back(batch.ids[base + t]);
            out[u].behaviors.push_back(std::move(beh));
        }
    }
    return out;
}

}  // namespace ptum
