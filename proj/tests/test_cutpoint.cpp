#include <doctest.h>

#include <random>
#include <sstream>

#include "y86pp/assembler.hpp"
#include "y86pp/cpu.hpp"
#include "y86pp/format.hpp"
#include "y86pp/cutpoint.hpp"
#include "y86pp/minvisor.hpp"
#include "y86pp/minvisor_specs.hpp"

using namespace y86pp;
using namespace y86pp::cutpoint;
using namespace y86pp::minvisor;

namespace {

struct Fixture {
  ProgramImage image = assemble_programs(kDefaultCodeBase);
  NptParams params;

  Fixture() {
    std::mt19937_64 rng(31);
    params = random_params(rng, kDefaultCodeBase);
  }

  CutpointSpec spec(Function fn) const { return make_spec(fn, image); }
  MachineState start(Function fn) const { return setup_call(fn, params, image); }
};

// Cutpoint states of a concrete run, in order (entry first).
std::vector<MachineState> harvest(const CutpointSpec& spec, MachineState s) {
  std::vector<MachineState> out{s};
  while (!spec.exit(s)) {
    Segment seg = run_to_next_cutpoint(spec, s);
    REQUIRE(seg.end != SegmentEnd::Fault);
    REQUIRE(seg.end != SegmentEnd::BoundExhausted);
    s = seg.state;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST_CASE("run_to_next_cutpoint") {
  const Fixture f;
  const CutpointSpec spec = f.spec(Function::InitPdts);
  const MachineState s0 = f.start(Function::InitPdts);

  SUBCASE("prologue reaches the outer loop head") {
    const Segment seg = run_to_next_cutpoint(spec, s0);
    CHECK(seg.end == SegmentEnd::Cutpoint);
    CHECK(seg.state.eip == f.image.symbol("L7"));
    CHECK(seg.steps == 21);
  }
  SUBCASE("already at exit") {
    const MachineState done = run(s0, 61559).state;
    REQUIRE(spec.exit(done));
    const Segment seg = run_to_next_cutpoint(spec, done);
    CHECK(seg.steps == 0);
    CHECK(seg.end == SegmentEnd::Exit);
    CHECK(seg.state == done);
  }
  SUBCASE("infinite loop exhausts the bound") {
    CutpointSpec toy;
    toy.name = "spin";
    toy.cutpoint = [](const MachineState&) { return false; };
    toy.exit = [](const MachineState&) { return false; };
    toy.in_main = [](const MachineState&) { return true; };
    toy.step_bound = 1000;
    MachineState s;
    s.memory.write_block(0, encode(Instruction{Mnemonic::Jmp, Reg::None, Reg::None, 0}));
    const Segment seg = run_to_next_cutpoint(toy, s);
    CHECK(seg.end == SegmentEnd::BoundExhausted);
    CHECK(seg.steps == 1000);
  }
}

TEST_CASE("entry VC") {
  const Fixture f;
  const CutpointSpec spec = f.spec(Function::InitPdts);
  MachineState s0 = f.start(Function::InitPdts);
  CHECK(check_entry_vc(spec, s0).verdict == Verdict::Pass);

  MachineState misaligned = s0;
  misaligned.memory.write32(f.params.pdt_array_base + 4, f.params.pdt_bases[1] + 8);
  CHECK(check_entry_vc(spec, misaligned).verdict == Verdict::Vacuous);

  CutpointSpec broken = spec;
  broken.assertion = [](const MachineState&, const MachineState&) -> std::optional<std::string> { return "nope"; };
  const VcReport r = check_entry_vc(broken, s0);
  CHECK(r.verdict == Verdict::Fail);
  CHECK(r.detail.find("nope") != std::string::npos);
}

TEST_CASE("preservation VC") {
  const Fixture f;
  const CutpointSpec spec = f.spec(Function::InitPdts);
  const MachineState s0 = f.start(Function::InitPdts);
  const auto states = harvest(spec, s0);
  const std::uint32_t l9 = f.image.symbol("L9");
  const std::uint32_t l7 = f.image.symbol("L7");
  CHECK(states.size() == 1 + 5 + 4 * 513 + 1);  // entry, L7 x5, L9 x513 per table, exit

  SUBCASE("holds at harvested loop heads") {
    int checked = 0;
    for (std::size_t i = 0; i < states.size(); i += 97) {
      const VcReport r = check_preservation_vc(spec, s0, states[i]);
      CHECK(r.verdict == Verdict::Pass);
      ++checked;
    }
    CHECK(checked > 10);
  }
  SUBCASE("corrupted inner counter fails") {
    auto it = std::find_if(states.begin(), states.end(), [&](const MachineState& s) { return s.eip == l9; });
    REQUIRE(it != states.end());
    MachineState bad = *(it + 40);
    const std::uint32_t ebp = bad.reg(Reg::EBP);
    bad.memory.write32(ebp - 28, bad.memory.read32(ebp - 28) + 1);
    const VcReport r = check_preservation_vc(spec, s0, bad);
    CHECK(r.verdict == Verdict::Fail);
  }
  SUBCASE("corrupted table entry under an intact counter fails") {
    MachineState bad = states[200];
    REQUIRE(bad.eip == l9);
    bad.memory.write8(f.params.pdt_bases[0], 0);
    CHECK(check_preservation_vc(spec, s0, bad).verdict == Verdict::Fail);
  }
  SUBCASE("exit state delegates to exit equality") {
    const VcReport r = check_preservation_vc(spec, s0, states.back());
    CHECK(r.verdict == Verdict::Pass);
    CHECK(r.steps == 0);
    MachineState off = states.back();
    off.reg(Reg::EAX) ^= 1;
    CHECK(check_preservation_vc(spec, s0, off).verdict == Verdict::Fail);
  }
  SUBCASE("outer head states are present") {
    CHECK(std::count_if(states.begin(), states.end(), [&](const MachineState& s) { return s.eip == l7; }) == 5);
  }
}

TEST_CASE("exit VC") {
  const Fixture f;
  for (auto fn : kAllFunctions) {
    CAPTURE(function_name(fn));
    const CutpointSpec spec = f.spec(fn);
    CHECK(check_exit_vc(spec, f.start(fn)).verdict == Verdict::Pass);
    CHECK(check_frame_vc(spec, f.start(fn)).verdict == Verdict::Pass);
  }

  const CutpointSpec spec = f.spec(Function::InitPdts);
  const MachineState s0 = f.start(Function::InitPdts);

  SUBCASE("one wrong byte in modify names its address") {
    CutpointSpec mutated = spec;
    const std::uint32_t addr = f.params.pdt_bases[2] + 8 * 17 + 1;
    mutated.modify = [spec, addr](const MachineState& s) {
      MachineState m = spec.modify(s);
      m.memory.write8(addr, static_cast<std::uint8_t>(m.memory.read8(addr) ^ 0x40));
      return m;
    };
    const VcReport r = check_exit_vc(mutated, s0);
    CHECK(r.verdict == Verdict::Fail);
    CHECK(r.detail.find(hex32(addr)) != std::string::npos);
  }
  SUBCASE("precondition false is vacuous") {
    MachineState bad = s0;
    bad.eip += 1;
    CHECK(check_exit_vc(spec, bad).verdict == Verdict::Vacuous);
  }
  SUBCASE("bound exhaustion is inconclusive") {
    CutpointSpec short_spec = spec;
    short_spec.exit_steps = 100;
    CHECK(check_exit_vc(short_spec, s0).verdict == Verdict::Inconclusive);
  }
}

TEST_CASE("frame VC catches a stray write") {
  const Fixture f;
  const CutpointSpec spec = f.spec(Function::InitPdpt);
  const std::uint32_t entry = f.image.symbol("init_pdpt");
  const std::uint32_t stray = 0x00F00000;

  // entry jumps to a stub that stores esp far away, replays the three
  // prologue instructions the jump overwrote, then resumes the function
  const ProgramImage stub = assemble_text("(:stub (irmovl " + std::to_string(stray) +
                                              " :imme1) (rmmovl :esp 0 (:imme1))"
                                              " (pushl :ebp) (rrmovl :esp :ebp) (irmovl 16 :imme1) (jmp " +
                                              std::to_string(entry + 10) + "))",
                                          0x00E00000);
  MachineState patched = f.start(Function::InitPdpt);
  patched.memory.write_block(stub.base, stub.bytes);
  patched.memory.write_block(entry, encode(Instruction{Mnemonic::Jmp, Reg::None, Reg::None, stub.base}));

  // the patched code no longer matches the image, so the precondition rejects it
  CHECK(check_frame_vc(spec, patched).verdict == Verdict::Vacuous);

  CutpointSpec lax = spec;
  lax.precondition = [](const MachineState&) { return true; };
  const VcReport r = check_frame_vc(lax, patched);
  CHECK(r.verdict == Verdict::Fail);
  CHECK(r.detail.find(hex32(stray)) != std::string::npos);
}

TEST_CASE("verify is deterministic and passes on the shipped functions") {
  const Fixture f;
  for (auto fn : kAllFunctions) {
    CAPTURE(function_name(fn));
    const CutpointSpec spec = f.spec(fn);
    const TrialSource source = trial_source(fn, f.image);
    const VerifySummary a = verify(spec, source, 3, 42);
    CHECK(a.all_passed());
    const VerifySummary b = verify(spec, source, 3, 42);
    std::ostringstream ra, rb;
    auto none = [](const TrialResult&) { return std::string("-"); };
    write_report(ra, a, none);
    write_report(rb, b, none);
    CHECK(ra.str() == rb.str());
  }
}

TEST_CASE("failing trials replay from their seed") {
  const Fixture f;
  const CutpointSpec good = f.spec(Function::SecNotPresent);
  CutpointSpec spec = good;
  // off-by-one modify: wrong whenever more than one page is protected
  spec.modify = [good](const MachineState& s0) {
    MachineState m = good.modify(s0);
    if (m.reg(Reg::IMME1) == 1 && s0.memory.read32(s0.reg(Reg::ESP) + 12) > (2u << 21)) m.reg(Reg::EAX) += 1;
    return m;
  };
  const TrialSource source = trial_source(Function::SecNotPresent, f.image);
  const VerifySummary summary = verify(spec, source, 20, 9);
  REQUIRE(summary.failures() > 0);
  for (const auto& t : summary.trials) {
    const TrialResult again = run_trial(spec, source, t.trial, t.seed);
    CHECK(again.seed == t.seed);
    CHECK(again.params == t.params);
    CHECK(again.ok() == t.ok());
  }
}

TEST_CASE("mutated binary is caught") {
  const Fixture f;
  ProgramImage mutated = f.image;
  // the flags constant 231 in init_pdts' "irmovl 231 :imme1"
  const std::uint32_t at = f.image.symbol("init_pdts") - f.image.base;
  bool patched = false;
  for (std::size_t i = at; i + 6 <= mutated.bytes.size() && !patched; ++i) {
    if (mutated.bytes[i] == 0x30 && mutated.bytes[i + 1] == 0xF8 && mutated.bytes[i + 2] == 0xE7) {
      mutated.bytes[i + 2] = 0xE5;
      patched = true;
    }
  }
  REQUIRE(patched);

  // run against the intact spec image, the corrupted code fails the precondition
  TrialSource foreign = trial_source(Function::InitPdts, f.image);
  foreign.initial_state = [mutated](const NptParams& p) { return setup_call(Function::InitPdts, p, mutated); };
  const VerifySummary vacuous = verify(f.spec(Function::InitPdts), foreign, 1, 1);
  CHECK(vacuous.tally().at(VcKind::Entry).vacuous == 1);

  // same closed-form spec, now checked against the corrupted bytes
  const VerifySummary summary =
      verify(make_spec(Function::InitPdts, mutated), trial_source(Function::InitPdts, mutated), 2, 1);
  CHECK(summary.failures() >= 1);
  CHECK_FALSE(summary.all_passed());
}

TEST_CASE("every loop is cut") {
  const Fixture f;
  for (auto fn : kAllFunctions) {
    CAPTURE(function_name(fn));
    CHECK_FALSE(cutpoint_coverage_gap(fn, f.image, cutpoint_addresses(fn, f.image)));
  }
  const auto points = cutpoint_addresses(Function::InitPdts, f.image);
  CHECK(std::count(points.begin(), points.end(), f.image.symbol("L7")) == 1);
  CHECK(std::count(points.begin(), points.end(), f.image.symbol("L9")) == 1);

  std::vector<std::uint32_t> without_inner;
  for (auto p : points) {
    if (p != f.image.symbol("L9")) without_inner.push_back(p);
  }
  CHECK(cutpoint_coverage_gap(Function::InitPdts, f.image, without_inner));
}

TEST_CASE("summary and report text") {
  const Fixture f;
  const CutpointSpec spec = f.spec(Function::InitPdpt);
  const VerifySummary summary = verify(spec, trial_source(Function::InitPdpt, f.image), 2, 5);
  std::ostringstream s;
  write_summary(s, summary);
  CHECK(s.str().find("ALL VCS PASS") != std::string::npos);
  CHECK(s.str().find("entry: pass=2") != std::string::npos);
  std::ostringstream r;
  write_report(r, summary, [](const TrialResult&) { return std::string("-"); });
  CHECK(r.str().find("trial=0 vc=entry verdict=pass") != std::string::npos);
  CHECK(r.str().find("trial=1 vc=frame") != std::string::npos);
}
