#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "y86pp/cutpoint.hpp"
#include "y86pp/minvisor.hpp"

namespace y86pp::minvisor {

// Load address used for the shipped verification bundles.
inline constexpr std::uint32_t kDefaultCodeBase = 0x7C00;

// Loop-head labels of each shipped function (cutpoints besides entry/exit).
std::vector<std::string> loop_heads(Function fn);

// Cutpoint bundle for `fn` as assembled in `image` (code cannot move once
// assembled, so the bundle is tied to the image's base).
cutpoint::CutpointSpec make_spec(Function fn, const ProgramImage& image);

// Random params around image.base, and the setup-call state for them.
cutpoint::TrialSource trial_source(Function fn, const ProgramImage& image);

// Cutpoint addresses (entry, loop heads, sentinel) of `fn` in `image`.
std::vector<std::uint32_t> cutpoint_addresses(Function fn, const ProgramImage& image);

// Every backward branch inside fn's code must jump over at least one
// cutpoint, so that every loop is cut. Describes the first uncut loop.
std::optional<std::string> cutpoint_coverage_gap(Function fn, const ProgramImage& image,
                                                 const std::vector<std::uint32_t>& cutpoints);

}  // namespace y86pp::minvisor
