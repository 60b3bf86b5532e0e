#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "y86pp/machine.hpp"
#include "y86pp/minvisor.hpp"

namespace y86pp::cutpoint {

using StatePredicate = std::function<bool(const MachineState&)>;

// Two-state assertion over (initial state, current state). Returns nullopt
// when it holds, otherwise a description of the first violated clause.
using Assertion = std::function<std::optional<std::string>(const MachineState& s0, const MachineState& s1)>;

using ModifyFunction = std::function<MachineState(const MachineState& s0)>;

// Ranges a run from s0 may write, given the lowest esp reached.
using WriteSet = std::function<std::vector<AddressRange>(const MachineState& s0, std::uint32_t low_water_esp)>;

// A verification bundle for one subroutine: the pieces a cutpoint proof
// needs, checked here on concrete states instead of symbolically.
struct CutpointSpec {
  std::string name;
  StatePredicate precondition;
  StatePredicate in_main;   // eip inside the subroutine's own code
  StatePredicate cutpoint;  // entry, loop heads, exit
  StatePredicate exit;      // returned to the caller
  Assertion assertion;
  ModifyFunction modify;    // s0 -> the exact state at exit
  WriteSet write_set;
  std::uint64_t step_bound = 0;  // between consecutive cutpoints
  std::uint64_t exit_steps = 0;  // from entry to exit
};

enum class VcKind : std::uint8_t { Entry, Preservation, Exit, Frame };
enum class Verdict : std::uint8_t { Pass, Vacuous, Fail, Inconclusive };

std::string_view to_string(VcKind kind);
std::string_view to_string(Verdict verdict);

struct VcReport {
  VcKind kind = VcKind::Entry;
  Verdict verdict = Verdict::Pass;
  std::uint64_t steps = 0;
  std::uint32_t start_eip = 0;
  std::string detail;  // empty on pass

  bool ok() const { return verdict == Verdict::Pass || verdict == Verdict::Vacuous; }
};

enum class SegmentEnd : std::uint8_t { Cutpoint, Exit, BoundExhausted, Fault };

struct Segment {
  MachineState state;
  std::uint64_t steps = 0;
  SegmentEnd end = SegmentEnd::Cutpoint;
  std::optional<FaultInfo> fault;
  std::uint32_t low_water_esp = 0;
};

// Steps from s until the next cutpoint or exit (at least one step unless s is
// already at exit), or until spec.step_bound steps have run.
Segment run_to_next_cutpoint(const CutpointSpec& spec, MachineState s);

// First component where two states differ ("eip", "eax", "flag cf",
// "memory 0x..."), or nullopt when they are equal.
std::optional<std::string> state_difference(const MachineState& actual, const MachineState& expected);

// precondition(s0) implies assertion(s0, s0). Vacuous when the precondition fails.
VcReport check_entry_vc(const CutpointSpec& spec, const MachineState& s0);

// From a cutpoint state satisfying the assertion, the next cutpoint satisfies
// it too, or the exit state equals modify(s0). A starting state that violates
// the assertion is reported as Fail.
VcReport check_preservation_vc(const CutpointSpec& spec, const MachineState& s0, const MachineState& s);

// Running s0 to exit yields exactly modify(s0), outside in_main.
VcReport check_exit_vc(const CutpointSpec& spec, const MachineState& s0);

// Memory outside spec.write_set is unchanged by the run.
VcReport check_frame_vc(const CutpointSpec& spec, const MachineState& s0);

// Where trial states come from.
struct TrialSource {
  std::function<minvisor::NptParams(std::mt19937_64&)> params;
  std::function<MachineState(const minvisor::NptParams&)> initial_state;
};

struct TrialResult {
  std::uint64_t trial = 0;
  std::uint64_t seed = 0;  // replays this trial alone
  minvisor::NptParams params;
  std::vector<VcReport> reports;

  bool ok() const;
};

struct KindTally {
  std::uint64_t pass = 0;
  std::uint64_t vacuous = 0;
  std::uint64_t fail = 0;
  std::uint64_t inconclusive = 0;
};

struct VerifySummary {
  std::string spec_name;
  std::uint64_t seed = 0;
  std::vector<TrialResult> trials;  // ordered by trial index

  std::map<VcKind, KindTally> tally() const;
  bool all_passed() const;
  std::uint64_t failures() const;
};

// Seed of trial `index` under a run seed.
std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t index);

// All VCs for one trial: entry, preservation at every cutpoint of the
// concrete run, exit and frame.
TrialResult run_trial(const CutpointSpec& spec, const TrialSource& source, std::uint64_t index, std::uint64_t seed);

VerifySummary verify(const CutpointSpec& spec, const TrialSource& source, std::uint64_t trials, std::uint64_t seed);

// One line per VC kind with pass/vacuous/fail/inconclusive counts.
void write_summary(std::ostream& out, const VerifySummary& summary);

// One record per (trial, vc kind):
//   trial=<n> vc=<kind> verdict=<worst> seed=<hex> checks=<n> steps=<n> witness=<path|-> detail="<first failure>"
// `witness_path(trial)` names the params file written for failing trials.
void write_report(std::ostream& out, const VerifySummary& summary,
                  const std::function<std::string(const TrialResult&)>& witness_path);

}  // namespace y86pp::cutpoint
