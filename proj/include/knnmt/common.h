// Copyright 2026 The knnmt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace knnmt {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

enum class ErrorKind {
  kInternal = 1,
  kUsage = 2,     // bad arguments, missing files, malformed input
  kMismatch = 3,  // fingerprint or configuration mismatch
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

inline Error usage_error(const std::string& what) {
  return Error(ErrorKind::kUsage, what);
}
inline Error mismatch_error(const std::string& what) {
  return Error(ErrorKind::kMismatch, what);
}

// 64-bit FNV-1a. Used for fingerprints only, never for security.
class Fingerprint {
 public:
  Fingerprint& update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fingerprint& update(std::string_view s) {
    update(s.data(), s.size());
    // Terminator byte: ("ab","c") and ("a","bc") hash apart.
    const unsigned char sep = 0xff;
    return update(&sep, 1);
  }
  template <typename T>
  Fingerprint& update_pod(const T& v) {
    return update(&v, sizeof(T));
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

// SplitMix64, used to derive independent streams from one seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string hex64(std::uint64_t v);

// Little-endian binary writer into an in-memory buffer.
class BinaryWriter {
 public:
  void magic(std::string_view m) { bytes(m.data(), m.size()); }
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }
  template <typename T>
  void array(std::span<const T> v) {
    bytes(v.data(), v.size_bytes());
  }
  void string(std::string_view s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::string& buffer() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

// Reader over a byte buffer. Every read names the section it belongs to so
// truncation errors point at the damaged part of the file.
class BinaryReader {
 public:
  explicit BinaryReader(std::string_view data, std::string file_kind)
      : data_(data), kind_(std::move(file_kind)) {}

  void section(std::string name) { section_ = std::move(name); }

  void expect_magic(std::string_view m) {
    if (data_.size() - pos_ < m.size() ||
        data_.substr(pos_, m.size()) != m) {
      throw usage_error(kind_ + ": bad header, expected version '" +
                        std::string(m) + "'");
    }
    pos_ += m.size();
  }
  template <typename T>
  T pod() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
  template <typename T>
  void array(std::span<T> out) {
    read(out.data(), out.size_bytes());
  }
  std::string string() {
    auto n = pod<std::uint32_t>();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view view(std::size_t n) {
    need(n);
    auto v = data_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw usage_error(kind_ + ": truncated file in section '" + section_ +
                        "'");
    }
  }
  void read(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }

  std::string_view data_;
  std::string kind_;
  std::string section_ = "header";
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace knnmt
