// y86pp: assemble, inspect, run and verify Y86++ programs.
//
// Exit status: 0 success, 1 domain failure (fault, VC failure, inconclusive
// run), 2 usage or configuration error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "y86pp/assembler.hpp"
#include "y86pp/cpu.hpp"
#include "y86pp/cutpoint.hpp"
#include "y86pp/error.hpp"
#include "y86pp/format.hpp"
#include "y86pp/minvisor.hpp"
#include "y86pp/minvisor_specs.hpp"
#include "y86pp/paging.hpp"

namespace {

using namespace y86pp;

constexpr int kOk = 0;
constexpr int kDomainFailure = 1;
constexpr int kUsage = 2;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

ProgramImage read_image_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path);
  return read_image(in);
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out << text;
  if (!out) throw ConfigError("error writing " + path);
}

std::uint32_t parse_address(const std::string& text) {
  std::uint32_t v = 0;
  if (!parse_u32(text, v)) throw ConfigError("malformed address '" + text + "'");
  return v;
}

// FNV-1a over (address, old, new) of every byte that differs.
struct MemoryDigest {
  std::uint64_t changed = 0;
  std::uint64_t hash = 0xcbf29ce484222325ull;
};

MemoryDigest digest_changes(const Memory& before, const Memory& after) {
  std::vector<std::uint32_t> addrs = before.nonzero_addresses();
  const auto more = after.nonzero_addresses();
  addrs.insert(addrs.end(), more.begin(), more.end());
  std::sort(addrs.begin(), addrs.end());
  addrs.erase(std::unique(addrs.begin(), addrs.end()), addrs.end());

  MemoryDigest d;
  auto mix = [&](std::uint8_t byte) {
    d.hash ^= byte;
    d.hash *= 0x100000001b3ull;
  };
  for (std::uint32_t a : addrs) {
    const std::uint8_t old_value = before.read8(a);
    const std::uint8_t new_value = after.read8(a);
    if (old_value == new_value) continue;
    ++d.changed;
    for (int i = 0; i < 4; ++i) mix(static_cast<std::uint8_t>(a >> (8 * i)));
    mix(old_value);
    mix(new_value);
  }
  return d;
}

// Runs create_nested_pt for `p` to completion and returns the state with
// paging still off.
MachineState build_tables(const minvisor::NptParams& p) {
  const ProgramImage image = minvisor::assemble_programs(p.code_base);
  MachineState s = minvisor::setup_call(minvisor::Function::CreateNestedPt, p, image);
  const auto result = run(std::move(s), 1000000);
  if (result.state.status != RunStatus::Halted) {
    std::ostringstream msg;
    msg << "create_nested_pt did not halt";
    if (result.state.fault) msg << ": " << describe(*result.state.fault);
    throw Error(msg.str());
  }
  return result.state;
}

int cmd_assemble(const std::vector<std::string>& sources, const std::string& base_text, const std::string& out) {
  const std::uint32_t base = parse_address(base_text);
  std::string text;
  for (const auto& path : sources) text += read_text(path) + "\n";
  try {
    write_output(out, image_to_string(assemble_text(text, base)));
  } catch (const ParseError& e) {
    std::cerr << "y86pp: " << (sources.size() == 1 ? sources[0] + ":" : std::string()) << e.what() << "\n";
    return kDomainFailure;
  } catch (const AssemblyError& e) {
    std::cerr << "y86pp: " << e.what() << "\n";
    return kDomainFailure;
  }
  return kOk;
}

int cmd_disasm(const std::string& image_path, const std::string& out) {
  write_output(out, disassemble(read_image_file(image_path)));
  return kOk;
}

int cmd_run(const std::string& image_path, const std::string& params_path, bool trace, std::uint64_t max_steps,
            const std::string& entry_name) {
  const ProgramImage image = read_image_file(image_path);
  const minvisor::NptParams p = minvisor::read_params_file(params_path);
  std::string name = entry_name;
  if (name.empty()) {
    for (const auto& [sym, addr] : image.symbols) {
      if (addr == image.base) {
        name = sym;
        break;
      }
    }
  }
  const auto fn = minvisor::function_from_name(name);
  if (!fn) throw ConfigError("entry '" + name + "' is not one of the shipped functions");

  const MachineState initial = minvisor::setup_call(*fn, p, image);
  const RunResult result = trace ? run_traced(initial, max_steps, std::cout) : run(initial, max_steps);
  const MachineState& s = result.state;
  const MemoryDigest d = digest_changes(initial.memory, s.memory);

  std::string status = "halted";
  if (s.status == RunStatus::Faulted) status = "faulted";
  if (s.status == RunStatus::Running) status = "inconclusive";
  std::cout << "status: " << status << "\n";
  std::cout << "steps: " << result.steps << "\n";
  std::cout << "eip: " << hex32(s.eip) << "\n";
  std::cout << "eax: " << hex32(s.reg(Reg::EAX)) << "\n";
  std::cout << "changed: " << d.changed << " bytes, digest " << hex64(d.hash) << "\n";
  if (s.fault) std::cout << "fault: " << describe(*s.fault) << "\n";
  return s.status == RunStatus::Halted ? kOk : kDomainFailure;
}

int cmd_translate(const std::string& params_path, const std::vector<std::string>& addresses, bool paging_off) {
  std::vector<std::uint32_t> addrs;
  for (const auto& a : addresses) addrs.push_back(parse_address(a));
  const minvisor::NptParams p = minvisor::read_params_file(params_path);
  MachineState s = build_tables(p);
  if (!paging_off) s = minvisor::with_nested_paging(std::move(s), p.pdpt_base);

  for (std::uint32_t a : addrs) {
    const auto outcome = va_to_pa(a, s);
    std::cout << hex32(a) << " -> ";
    if (const auto* phys = std::get_if<Physical>(&outcome)) {
      std::cout << hex32(phys->addr) << "\n";
    } else {
      std::cout << "FAULT(" << std::get<PageFault>(outcome).level << ")\n";
    }
  }
  return kOk;
}

void dump_entries(std::ostream& out, const Memory& m, std::uint32_t base, std::uint32_t count, bool leaf) {
  for (std::uint32_t i = 0; i < count; ++i) {
    const PagingEntry e{m.read64(base + 8 * i)};
    char index[16];
    std::snprintf(index, sizeof index, "%3u", i);
    out << "  [" << index << "] " << hex64(e.raw) << " " << (e.present() ? "P" : "-") << " "
        << hex32(leaf ? e.frame_base() : e.table_base()) << "\n";
  }
}

int cmd_dump_tables(const std::string& params_path) {
  const minvisor::NptParams p = minvisor::read_params_file(params_path);
  const MachineState s = build_tables(p);
  std::cout << "PDPT " << hex32(p.pdpt_base) << "\n";
  dump_entries(std::cout, s.memory, p.pdpt_base, 4, false);
  for (std::size_t t = 0; t < 4; ++t) {
    std::cout << "PDT " << t << " " << hex32(p.pdt_bases[t]) << "\n";
    dump_entries(std::cout, s.memory, p.pdt_bases[t], 512, true);
  }
  return kOk;
}

int cmd_verify(const std::string& spec_name, std::uint64_t trials, const std::string& seed_text,
               const std::string& report_path, const std::string& params_path) {
  std::uint64_t seed = 0;
  try {
    std::size_t used = 0;
    seed = std::stoull(seed_text, &used, 0);
    if (used != seed_text.size()) throw std::invalid_argument(seed_text);
  } catch (const std::logic_error&) {
    throw ConfigError("malformed seed '" + seed_text + "'");
  }
  const auto fn = minvisor::function_from_name(spec_name);
  if (!fn) throw ConfigError("unknown spec '" + spec_name + "'");

  std::optional<minvisor::NptParams> fixed;
  if (!params_path.empty()) fixed = minvisor::read_params_file(params_path);
  const std::uint32_t base = fixed ? fixed->code_base : minvisor::kDefaultCodeBase;
  const ProgramImage image = minvisor::assemble_programs(base);
  const cutpoint::CutpointSpec spec = minvisor::make_spec(*fn, image);
  cutpoint::TrialSource source = minvisor::trial_source(*fn, image);
  if (fixed) {
    minvisor::validate(*fixed, image.bytes.size() + 1);
    source.params = [p = *fixed](std::mt19937_64&) { return p; };
    trials = 1;
  }

  const cutpoint::VerifySummary summary = cutpoint::verify(spec, source, trials, seed);
  const std::string report = report_path.empty() ? spec_name + ".report" : report_path;
  auto witness = [&](const cutpoint::TrialResult& t) { return report + ".trial" + std::to_string(t.trial) + ".params"; };

  std::ofstream out(report, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + report);
  cutpoint::write_report(out, summary, witness);
  for (const auto& t : summary.trials) {
    if (!t.ok()) write_output(witness(t), minvisor::format_params(t.params));
  }
  cutpoint::write_summary(std::cout, summary);
  return summary.all_passed() ? kOk : kDomainFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Y86++ assembler, simulator and cutpoint checker"};
  app.require_subcommand(1);

  std::vector<std::string> sources;
  std::string base = "0";
  std::string out;
  auto* assemble_cmd = app.add_subcommand("assemble", "assemble sources into an image file");
  assemble_cmd->add_option("sources", sources, "source files, assembled as one unit")->required()->check(CLI::ExistingFile);
  assemble_cmd->add_option("--base", base, "load address");
  assemble_cmd->add_option("--out", out, "image path (default stdout)");

  std::string image_path;
  auto* disasm_cmd = app.add_subcommand("disasm", "disassemble an image file");
  disasm_cmd->add_option("image", image_path, "image file")->required();
  disasm_cmd->add_option("--out", out, "output path (default stdout)");

  std::string params_path;
  bool trace = false;
  std::uint64_t max_steps = 1000000;
  std::string entry;
  auto* run_cmd = app.add_subcommand("run", "set up a call from params and run it");
  run_cmd->add_option("image", image_path, "image file")->required();
  run_cmd->add_option("--params", params_path, "params file")->required();
  run_cmd->add_flag("--trace", trace, "print one line per step");
  run_cmd->add_option("--max-steps", max_steps, "step budget");
  run_cmd->add_option("--entry", entry, "function to call (default: symbol at the image base)");

  std::vector<std::string> addresses;
  bool paging_off = false;
  auto* translate_cmd = app.add_subcommand("translate", "build the nested tables and translate addresses");
  translate_cmd->add_option("--params", params_path, "params file")->required();
  translate_cmd->add_option("addresses", addresses, "virtual addresses")->required();
  translate_cmd->add_flag("--paging-off", paging_off, "translate with guest mode off");

  std::string spec_name;
  std::uint64_t trials = 20;
  std::string seed = "0";
  std::string report;
  auto* verify_cmd = app.add_subcommand("verify", "check a function's cutpoint VCs on random trials");
  verify_cmd->add_option("spec", spec_name, "init_pdpt, init_pdts, sec_not_present or create_nested_pt")->required();
  verify_cmd->add_option("--trials", trials, "number of trials");
  verify_cmd->add_option("--seed", seed, "run seed");
  verify_cmd->add_option("--report", report, "report path (default <spec>.report)");
  verify_cmd->add_option("--params", params_path, "replay one trial with these params");

  auto* dump_cmd = app.add_subcommand("dump-tables", "build the nested tables and print every entry");
  dump_cmd->add_option("--params", params_path, "params file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*assemble_cmd) return cmd_assemble(sources, base, out);
    if (*disasm_cmd) return cmd_disasm(image_path, out);
    if (*run_cmd) return cmd_run(image_path, params_path, trace, max_steps, entry);
    if (*translate_cmd) return cmd_translate(params_path, addresses, paging_off);
    if (*verify_cmd) return cmd_verify(spec_name, trials, seed, report, params_path);
    if (*dump_cmd) return cmd_dump_tables(params_path);
  } catch (const ConfigError& e) {
    std::cerr << "y86pp: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "y86pp: " << e.what() << "\n";
    return kDomainFailure;
  }
  return kUsage;
}
