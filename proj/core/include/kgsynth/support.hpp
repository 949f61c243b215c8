#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace kgsynth {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

std::string read_text_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Replaces invalid UTF-8 sequences with U+FFFD. Returns the number of
/// replacements through `replaced`.
std::string sanitize_utf8(std::string_view text, std::size_t& replaced);

/// Decodes UTF-8 into code points. Input is expected to be valid; stray bytes
/// decode to U+FFFD.
std::u32string decode_utf8(std::string_view text);

std::string_view trim(std::string_view text) noexcept;

/// True when `word` occurs in `text` delimited by non-identifier characters.
bool mentions_word(std::string_view text, std::string_view word) noexcept;

uint64_t splitmix64(uint64_t x) noexcept;

using Rng = std::mt19937_64;

/// Uniform integer in [0, n). Rejection sampling over the raw engine output
/// keeps draws identical across standard library implementations.
std::size_t uniform_index(Rng& rng, std::size_t n);

/// Runs fn(i) for i in [0, n) on at most `jobs` threads. The first exception
/// thrown by any call is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> workers;
    workers.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace kgsynth
