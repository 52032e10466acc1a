#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "aod/common.hpp"
#include "aod/rng.hpp"

namespace aod {

inline std::string base64_encode(const std::uint8_t* data, std::size_t len) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (std::size_t i = 0; i < len; i += 3) {
    std::uint32_t chunk = static_cast<std::uint32_t>(data[i]) << 16;
    if (i + 1 < len) chunk |= static_cast<std::uint32_t>(data[i + 1]) << 8;
    if (i + 2 < len) chunk |= static_cast<std::uint32_t>(data[i + 2]);
    out.push_back(alphabet[(chunk >> 18) & 63]);
    out.push_back(alphabet[(chunk >> 12) & 63]);
    out.push_back(i + 1 < len ? alphabet[(chunk >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? alphabet[chunk & 63] : '=');
  }
  return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw ParseError("base64: length must be a multiple of 4");
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int vals[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=') {
        if (i + 4 != text.size() || k < 2) throw ParseError("base64: misplaced padding");
        vals[k] = 0;
        ++pad;
      } else {
        vals[k] = value_of(c);
        if (vals[k] < 0) throw ParseError("base64: invalid character");
        if (pad > 0) throw ParseError("base64: data after padding");
      }
    }
    const std::uint32_t chunk = (vals[0] << 18) | (vals[1] << 12) | (vals[2] << 6) | vals[3];
    out.push_back(static_cast<std::uint8_t>((chunk >> 16) & 0xff));
    if (pad < 2) out.push_back(static_cast<std::uint8_t>((chunk >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<std::uint8_t>(chunk & 0xff));
  }
  return out;
}

inline std::string base64_of_doubles(const std::vector<double>& v) {
  return base64_encode(reinterpret_cast<const std::uint8_t*>(v.data()),
                       v.size() * sizeof(double));
}

inline std::vector<double> doubles_of_base64(const std::string& text) {
  const std::vector<std::uint8_t> bytes = base64_decode(text);
  if (bytes.size() % sizeof(double) != 0) {
    throw ParseError("base64: byte count is not a multiple of 8");
  }
  std::vector<double> out(bytes.size() / sizeof(double));
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

// One derived seed value for a (seed, ids...) tuple.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return Rng::stream(seed, a, b, c).next_u64();
}

// Runs fn(i) for i in [0, n) across up to `threads` workers. Tasks must write
// only to their own slots; results are then independent of scheduling.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  int workers = threads;
  if (workers <= 0) workers = static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  workers = std::min<int>(workers, static_cast<int>(n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace aod
