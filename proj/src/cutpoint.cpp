#include "y86pp/cutpoint.hpp"

#include <algorithm>
#include <ostream>

#include "y86pp/cpu.hpp"
#include "y86pp/format.hpp"

namespace y86pp::cutpoint {

namespace {

VcReport make_report(VcKind kind, Verdict verdict, const MachineState& start, std::uint64_t steps = 0,
                     std::string detail = {}) {
  return VcReport{kind, verdict, steps, start.eip, std::move(detail)};
}

std::string segment_problem(const Segment& seg) {
  switch (seg.end) {
    case SegmentEnd::BoundExhausted:
      return "step bound exhausted after " + std::to_string(seg.steps) + " steps at eip " + hex32(seg.state.eip);
    case SegmentEnd::Fault: return seg.fault ? describe(*seg.fault) : std::string("fault");
    default: return {};
  }
}

// Exit equality: reached state equals modify(s0) and lies outside the body.
std::optional<std::string> exit_mismatch(const CutpointSpec& spec, const MachineState& s0, const MachineState& reached) {
  if (spec.in_main(reached)) return "exit state is still inside " + spec.name;
  if (auto diff = state_difference(reached, spec.modify(s0))) return "exit state differs from modify: " + *diff;
  return std::nullopt;
}

struct Preservation {
  VcReport report;
  std::optional<Segment> segment;
};

Preservation preservation(const CutpointSpec& spec, const MachineState& s0, const MachineState& s) {
  if (spec.exit(s)) {
    auto mismatch = exit_mismatch(spec, s0, s);
    return {make_report(VcKind::Preservation, mismatch ? Verdict::Fail : Verdict::Pass, s, 0, mismatch.value_or("")),
            std::nullopt};
  }
  if (!spec.cutpoint(s) && !spec.in_main(s)) {
    return {make_report(VcKind::Preservation, Verdict::Fail, s, 0, "premise violated: state is not in " + spec.name),
            std::nullopt};
  }
  if (auto violated = spec.assertion(s0, s)) {
    return {make_report(VcKind::Preservation, Verdict::Fail, s, 0, "premise violated: " + *violated), std::nullopt};
  }

  Segment seg = run_to_next_cutpoint(spec, s);
  switch (seg.end) {
    case SegmentEnd::BoundExhausted:
      return {make_report(VcKind::Preservation, Verdict::Inconclusive, s, seg.steps, segment_problem(seg)), seg};
    case SegmentEnd::Fault:
      return {make_report(VcKind::Preservation, Verdict::Fail, s, seg.steps, segment_problem(seg)), seg};
    case SegmentEnd::Exit: {
      auto mismatch = exit_mismatch(spec, s0, seg.state);
      return {make_report(VcKind::Preservation, mismatch ? Verdict::Fail : Verdict::Pass, s, seg.steps,
                          mismatch.value_or("")),
              std::move(seg)};
    }
    case SegmentEnd::Cutpoint: {
      auto violated = spec.assertion(s0, seg.state);
      std::string detail;
      if (violated) detail = "assertion fails at " + hex32(seg.state.eip) + ": " + *violated;
      return {make_report(VcKind::Preservation, violated ? Verdict::Fail : Verdict::Pass, s, seg.steps, detail),
              std::move(seg)};
    }
  }
  return {make_report(VcKind::Preservation, Verdict::Fail, s), std::nullopt};
}

// Runs s0 until exit, a fault, or exit_steps, tracking the lowest esp.
Segment run_to_exit(const CutpointSpec& spec, MachineState s) {
  Segment seg;
  seg.low_water_esp = s.reg(Reg::ESP);
  while (!spec.exit(s)) {
    if (seg.steps >= spec.exit_steps) {
      seg.end = SegmentEnd::BoundExhausted;
      seg.state = std::move(s);
      return seg;
    }
    step_in_place(s);
    ++seg.steps;
    seg.low_water_esp = std::min(seg.low_water_esp, s.reg(Reg::ESP));
    if (s.status == RunStatus::Faulted) {
      seg.end = SegmentEnd::Fault;
      seg.fault = s.fault;
      seg.state = std::move(s);
      return seg;
    }
    if (s.status == RunStatus::Halted) {
      seg.end = SegmentEnd::Fault;
      seg.fault = FaultInfo{FaultKind::HaltInstr, s.eip, std::nullopt, 0};
      seg.state = std::move(s);
      return seg;
    }
  }
  seg.end = SegmentEnd::Exit;
  seg.state = std::move(s);
  return seg;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::string_view to_string(VcKind kind) {
  switch (kind) {
    case VcKind::Entry: return "entry";
    case VcKind::Preservation: return "preservation";
    case VcKind::Exit: return "exit";
    case VcKind::Frame: return "frame";
  }
  return "?";
}

std::string_view to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::Pass: return "pass";
    case Verdict::Vacuous: return "vacuous";
    case Verdict::Fail: return "fail";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "?";
}

Segment run_to_next_cutpoint(const CutpointSpec& spec, MachineState s) {
  Segment seg;
  seg.low_water_esp = s.reg(Reg::ESP);
  if (spec.exit(s)) {
    seg.end = SegmentEnd::Exit;
    seg.state = std::move(s);
    return seg;
  }
  for (;;) {
    if (seg.steps >= spec.step_bound) {
      seg.end = SegmentEnd::BoundExhausted;
      break;
    }
    step_in_place(s);
    ++seg.steps;
    seg.low_water_esp = std::min(seg.low_water_esp, s.reg(Reg::ESP));
    if (s.status == RunStatus::Faulted) {
      seg.end = SegmentEnd::Fault;
      seg.fault = s.fault;
      break;
    }
    if (s.status == RunStatus::Halted) {
      seg.end = SegmentEnd::Fault;
      seg.fault = FaultInfo{FaultKind::HaltInstr, s.eip, std::nullopt, 0};
      break;
    }
    if (spec.exit(s)) {
      seg.end = SegmentEnd::Exit;
      break;
    }
    if (spec.cutpoint(s)) {
      seg.end = SegmentEnd::Cutpoint;
      break;
    }
  }
  seg.state = std::move(s);
  return seg;
}

std::optional<std::string> state_difference(const MachineState& actual, const MachineState& expected) {
  auto values = [](std::uint32_t got, std::uint32_t want) { return ": got " + hex32(got) + ", expected " + hex32(want); };
  if (actual.status != expected.status) return std::string("status");
  if (actual.fault != expected.fault) return std::string("fault info");
  if (actual.eip != expected.eip) return "eip" + values(actual.eip, expected.eip);
  for (std::size_t r = 0; r < kRegisterCount; ++r) {
    if (actual.gpr[r] != expected.gpr[r]) {
      return std::string(register_name(static_cast<Reg>(r))) + values(actual.gpr[r], expected.gpr[r]);
    }
  }
  const auto& fa = actual.flags;
  const auto& fe = expected.flags;
  if (fa.zf != fe.zf) return std::string("flag zf");
  if (fa.sf != fe.sf) return std::string("flag sf");
  if (fa.of != fe.of) return std::string("flag of");
  if (fa.cf != fe.cf) return std::string("flag cf");
  if (actual.cr3 != expected.cr3) return "cr3" + values(actual.cr3, expected.cr3);
  if (actual.guest_mode != expected.guest_mode) return std::string("guest mode");
  if (actual.shadow != expected.shadow) return std::string("shadow registers");
  if (auto addr = actual.memory.first_difference(expected.memory)) {
    return "memory " + hex32(*addr) + ": got " + hex8(actual.memory.read8(*addr)) + ", expected " +
           hex8(expected.memory.read8(*addr));
  }
  return std::nullopt;
}

VcReport check_entry_vc(const CutpointSpec& spec, const MachineState& s0) {
  if (!spec.precondition(s0)) return make_report(VcKind::Entry, Verdict::Vacuous, s0, 0, "precondition does not hold");
  if (!spec.cutpoint(s0)) return make_report(VcKind::Entry, Verdict::Fail, s0, 0, "entry state is not a cutpoint");
  if (auto violated = spec.assertion(s0, s0)) return make_report(VcKind::Entry, Verdict::Fail, s0, 0, *violated);
  return make_report(VcKind::Entry, Verdict::Pass, s0);
}

VcReport check_preservation_vc(const CutpointSpec& spec, const MachineState& s0, const MachineState& s) {
  return preservation(spec, s0, s).report;
}

VcReport check_exit_vc(const CutpointSpec& spec, const MachineState& s0) {
  if (!spec.precondition(s0)) return make_report(VcKind::Exit, Verdict::Vacuous, s0, 0, "precondition does not hold");
  const Segment seg = run_to_exit(spec, s0);
  switch (seg.end) {
    case SegmentEnd::BoundExhausted:
      return make_report(VcKind::Exit, Verdict::Inconclusive, s0, seg.steps, segment_problem(seg));
    case SegmentEnd::Fault: return make_report(VcKind::Exit, Verdict::Fail, s0, seg.steps, segment_problem(seg));
    default: break;
  }
  auto mismatch = exit_mismatch(spec, s0, seg.state);
  return make_report(VcKind::Exit, mismatch ? Verdict::Fail : Verdict::Pass, s0, seg.steps, mismatch.value_or(""));
}

VcReport check_frame_vc(const CutpointSpec& spec, const MachineState& s0) {
  if (!spec.precondition(s0)) return make_report(VcKind::Frame, Verdict::Vacuous, s0, 0, "precondition does not hold");
  const Segment seg = run_to_exit(spec, s0);
  if (seg.end == SegmentEnd::BoundExhausted) {
    return make_report(VcKind::Frame, Verdict::Inconclusive, s0, seg.steps, segment_problem(seg));
  }
  if (seg.end == SegmentEnd::Fault) return make_report(VcKind::Frame, Verdict::Fail, s0, seg.steps, segment_problem(seg));
  const auto writable = spec.write_set(s0, seg.low_water_esp);
  if (auto addr = seg.state.memory.first_difference(s0.memory, writable)) {
    return make_report(VcKind::Frame, Verdict::Fail, s0, seg.steps, "write outside the frame at " + hex32(*addr));
  }
  return make_report(VcKind::Frame, Verdict::Pass, s0, seg.steps);
}

bool TrialResult::ok() const {
  return std::all_of(reports.begin(), reports.end(), [](const VcReport& r) { return r.ok(); });
}

std::map<VcKind, KindTally> VerifySummary::tally() const {
  std::map<VcKind, KindTally> out;
  for (VcKind kind : {VcKind::Entry, VcKind::Preservation, VcKind::Exit, VcKind::Frame}) out[kind];
  for (const auto& trial : trials) {
    for (const auto& r : trial.reports) {
      auto& t = out[r.kind];
      switch (r.verdict) {
        case Verdict::Pass: ++t.pass; break;
        case Verdict::Vacuous: ++t.vacuous; break;
        case Verdict::Fail: ++t.fail; break;
        case Verdict::Inconclusive: ++t.inconclusive; break;
      }
    }
  }
  return out;
}

bool VerifySummary::all_passed() const {
  return std::all_of(trials.begin(), trials.end(), [](const TrialResult& t) { return t.ok(); });
}

std::uint64_t VerifySummary::failures() const {
  std::uint64_t n = 0;
  for (const auto& [_, t] : tally()) n += t.fail + t.inconclusive;
  return n;
}

std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t index) { return splitmix64(seed ^ splitmix64(index)); }

TrialResult run_trial(const CutpointSpec& spec, const TrialSource& source, std::uint64_t index, std::uint64_t seed) {
  TrialResult result;
  result.trial = index;
  result.seed = seed;
  std::mt19937_64 rng(seed);
  result.params = source.params(rng);
  const MachineState s0 = source.initial_state(result.params);

  const VcReport entry = check_entry_vc(spec, s0);
  result.reports.push_back(entry);
  if (entry.verdict == Verdict::Vacuous) {
    for (VcKind kind : {VcKind::Preservation, VcKind::Exit, VcKind::Frame}) {
      result.reports.push_back(make_report(kind, Verdict::Vacuous, s0, 0, "precondition does not hold"));
    }
    return result;
  }

  // Walk the concrete run cutpoint by cutpoint.
  MachineState s = s0;
  std::uint64_t walked = 0;
  for (;;) {
    auto p = preservation(spec, s0, s);
    walked += p.report.steps;
    const bool reached_exit = spec.exit(s) || (p.segment && p.segment->end == SegmentEnd::Exit);
    const bool stop = !p.report.ok() || !p.segment || reached_exit;
    result.reports.push_back(std::move(p.report));
    if (stop) break;
    if (walked > spec.exit_steps) {
      result.reports.push_back(make_report(VcKind::Preservation, Verdict::Inconclusive, s, walked,
                                           "no exit within " + std::to_string(spec.exit_steps) + " steps"));
      break;
    }
    s = std::move(p.segment->state);
  }

  result.reports.push_back(check_exit_vc(spec, s0));
  result.reports.push_back(check_frame_vc(spec, s0));
  return result;
}

VerifySummary verify(const CutpointSpec& spec, const TrialSource& source, std::uint64_t trials, std::uint64_t seed) {
  VerifySummary summary;
  summary.spec_name = spec.name;
  summary.seed = seed;
  summary.trials.reserve(trials);
  for (std::uint64_t i = 0; i < trials; ++i) summary.trials.push_back(run_trial(spec, source, i, trial_seed(seed, i)));
  return summary;
}

void write_summary(std::ostream& out, const VerifySummary& summary) {
  out << summary.spec_name << ": " << summary.trials.size() << " trials, seed " << summary.seed << '\n';
  for (const auto& [kind, t] : summary.tally()) {
    out << "  " << to_string(kind) << ": pass=" << t.pass << " vacuous=" << t.vacuous << " fail=" << t.fail
        << " inconclusive=" << t.inconclusive << '\n';
  }
  out << (summary.all_passed() ? "ALL VCS PASS" : "VC FAILURES") << '\n';
}

void write_report(std::ostream& out, const VerifySummary& summary,
                  const std::function<std::string(const TrialResult&)>& witness_path) {
  for (const auto& trial : summary.trials) {
    for (VcKind kind : {VcKind::Entry, VcKind::Preservation, VcKind::Exit, VcKind::Frame}) {
      std::uint64_t checks = 0;
      std::uint64_t steps = 0;
      Verdict worst = Verdict::Pass;
      const VcReport* first_bad = nullptr;
      bool any_vacuous = false;
      for (const auto& r : trial.reports) {
        if (r.kind != kind) continue;
        ++checks;
        steps += r.steps;
        any_vacuous = any_vacuous || r.verdict == Verdict::Vacuous;
        if (!r.ok()) {
          if (!first_bad) first_bad = &r;
          if (worst != Verdict::Fail) worst = r.verdict;
        }
      }
      if (!first_bad && any_vacuous) worst = Verdict::Vacuous;
      const std::string witness = (first_bad && witness_path) ? witness_path(trial) : "-";
      out << "trial=" << trial.trial << " vc=" << to_string(kind) << " verdict=" << to_string(worst)
          << " seed=0x" << std::hex << trial.seed << std::dec << " checks=" << checks << " steps=" << steps
          << " witness=" << witness << " detail=\"" << (first_bad ? first_bad->detail : std::string()) << "\"\n";
    }
  }
}

}  // namespace y86pp::cutpoint
