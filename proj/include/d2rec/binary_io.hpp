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

#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

// Little-endian primitives shared by the embedding and checkpoint files.
namespace d2rec::binary {

void WriteU32(std::ostream& out, std::uint32_t v);
void WriteF32(std::ostream& out, float v);
void WriteF64(std::ostream& out, double v);

std::uint32_t ReadU32(std::istream& in);
float ReadF32(std::istream& in);
double ReadF64(std::istream& in);

void WriteMagic(std::ostream& out, const char (&magic)[6]);
// Throws Error naming `path` if the next five bytes differ from `magic`.
void ExpectMagic(std::istream& in, const char (&magic)[6], const std::string& path);

}  // namespace d2rec::binary
