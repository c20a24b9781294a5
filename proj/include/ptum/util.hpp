// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ptum {

// ---- hashing / seed derivation -----------------------------------------

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& s);

// splitmix64 finalizer; used to mix seed components.
std::uint64_t mix64(std::uint64_t x);

// Deterministic per-user stream seed. Parallel and serial sample
// construction agree because each user's draws come from its own stream.
std::uint64_t derive_seed(std::uint64_t global_seed, const std::string& user_id,
                          std::uint64_t epoch);

// CRC-32 (IEEE, reflected). Incremental: pass the previous return value as
// `crc` to continue a running checksum; start from 0.
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc = 0);

// ---- file helpers --------------------------------------------------------

// Writes via a temp file in the same directory and renames into place, so
// readers never observe a partial file.
void atomic_write_file(const std::filesystem::path& path, const std::string& contents);

std::string read_file(const std::filesystem::path& path);

// Appends one CSV row under an exclusive flock; writes `header` first if
// the file is empty or new.
void append_csv_row(const std::filesystem::path& path, const std::string& header,
                    const std::string& row);

// Round-trippable formatting for doubles (shortest form up to 17 digits).
std::string format_double(double v);

// Number of worker threads for sample construction: PTUM_NUM_THREADS,
// clamped to [1, 64]; 1 when unset or unparsable.
int num_threads_from_env();

}  // namespace ptum
