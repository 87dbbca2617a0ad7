#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "apm/numerics.hpp"

namespace apm {

enum class Split { Train, Dev, Test };

std::string_view to_string(Split split) noexcept;
Split parse_split(std::string_view name);

/// A labelled stretch of frames: T x D features, one language label for the
/// whole segment and one phoneme label per frame.
struct Segment {
  std::string id;
  Mat frames;
  std::size_t language = 0;
  std::vector<std::size_t> phonemes;
  Split split = Split::Train;
  std::string condition;  // test-condition tag, empty for train/dev

  std::size_t length() const noexcept { return frames.rows(); }
};

}  // namespace apm
