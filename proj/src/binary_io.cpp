// Copyright 2026 The D2Rec Authors.
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

#include "d2rec/binary_io.hpp"

#include <array>
#include <bit>
#include <cstring>

#include "d2rec/common.hpp"

namespace d2rec::binary {

namespace {

template <typename U>
void WriteLe(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t k = 0; k < sizeof(U); ++k)
    bytes[k] = static_cast<char>((v >> (8 * k)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U ReadLe(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw Error("unexpected end of binary file");
  U v = 0;
  for (std::size_t k = 0; k < sizeof(U); ++k)
    v |= static_cast<U>(bytes[k]) << (8 * k);
  return v;
}

}  // namespace

void WriteU32(std::ostream& out, std::uint32_t v) { WriteLe(out, v); }
void WriteF32(std::ostream& out, float v) {
  WriteLe(out, std::bit_cast<std::uint32_t>(v));
}
void WriteF64(std::ostream& out, double v) {
  WriteLe(out, std::bit_cast<std::uint64_t>(v));
}

std::uint32_t ReadU32(std::istream& in) { return ReadLe<std::uint32_t>(in); }
float ReadF32(std::istream& in) {
  return std::bit_cast<float>(ReadLe<std::uint32_t>(in));
}
double ReadF64(std::istream& in) {
  return std::bit_cast<double>(ReadLe<std::uint64_t>(in));
}

void WriteMagic(std::ostream& out, const char (&magic)[6]) { out.write(magic, 5); }

void ExpectMagic(std::istream& in, const char (&magic)[6], const std::string& path) {
  char got[5] = {};
  in.read(got, 5);
  if (!in || std::memcmp(got, magic, 5) != 0)
    throw Error(path + ": bad magic, expected " + std::string(magic, 5));
}

}  // namespace d2rec::binary
