// Acceptance gate: runs every end-to-end criterion and prints one line per
// check as it completes. Exit status is zero only if all of them pass. An
// optional argument overrides the artifact output root.

#include "mkvcn/acceptance.hpp"

#include <cstdio>
#include <string>
#include <vector>

int main(int argc, char** argv) {
  const std::string out_root = argc > 1 ? argv[1] : "acceptance_out";

  const auto print = [](const mkvcn::CriterionResult& r) {
    std::printf("%s criterion %d: %s — %s\n", r.pass ? "PASS" : "FAIL", r.id,
                r.name.c_str(), r.detail.c_str());
    std::fflush(stdout);
  };
  const std::vector<mkvcn::CriterionResult> results =
      mkvcn::run_all_criteria(out_root, print);

  int failed = 0;
  for (const mkvcn::CriterionResult& r : results)
    if (!r.pass) ++failed;
  std::printf("%d/%zu criteria passed\n", int(results.size()) - failed,
              results.size());
  return failed == 0 ? 0 : 1;
}
