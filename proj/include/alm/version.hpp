#pragma once

namespace alm {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr int kVocabFormatVersion = 1;

}  // namespace alm
