// Acceptance suite: one PASS/FAIL line per criterion 1-12.
//
// A criterion passes when its numerical check passes and it finishes under
// its runtime budget. Criteria flagged known-unattainable print FAIL with a
// marker and do not change the exit status; every other failure does.

#include <cstdio>
#include <string>
#include <vector>

#include "llqrsam/harness/checks.hpp"

using namespace llqrsam::harness;

namespace {

/// Criterion 12: the deterministic report must be byte-identical across two
/// independent evaluations, with different thread counts.
bool determinism_check(const std::string& first) {
  const auto specs = all_checks();  // outcomes point into this
  const auto again = run_checks(specs, 3);
  return dump_json(report_json(again)) == first;
}

}  // namespace

int main() {
  const auto specs = all_checks();
  const auto outcomes = run_checks(specs, 1);
  int hard_failures = 0;

  for (const auto& o : outcomes) {
    if (o.spec->criterion == 0) continue;
    const bool numeric = o.result.passed;
    const bool timely = o.within_budget();
    const bool pass = numeric && timely;
    std::string detail = o.result.measured.dump();
    if (detail.size() > 240) detail = detail.substr(0, 237) + "...";
    std::printf("criterion %2d %s %-24s %.3fs", o.spec->criterion, pass ? "PASS" : "FAIL",
                o.spec->id.c_str(), o.runtime_s);
    if (o.spec->budget_s > 0.0) std::printf(" (budget %.0fs)", o.spec->budget_s);
    if (!timely) std::printf(" [over budget]");
    if (!pass && o.spec->known_unattainable) std::printf(" [known unattainable]");
    std::printf("\n    %s\n", detail.c_str());
    if (!pass && !o.result.note.empty()) std::printf("    note: %s\n", o.result.note.c_str());
    if (!pass && !o.spec->known_unattainable) ++hard_failures;
  }

  const std::string report = dump_json(report_json(outcomes));
  const bool same = determinism_check(report);
  std::printf("criterion 12 %s %-24s report bytes=%zu\n", same ? "PASS" : "FAIL", "determinism",
              report.size());
  if (!same) ++hard_failures;

  for (const auto& o : outcomes)
    if (o.spec->criterion == 0 && !o.result.passed) {
      std::printf("property %s FAIL %s\n", o.spec->id.c_str(), o.result.measured.dump().c_str());
      ++hard_failures;
    }

  std::printf("acceptance: %s\n", hard_failures == 0 ? "ok" : "FAILED");
  return hard_failures == 0 ? 0 : 1;
}
