#pragma once

// End-to-end acceptance checks: each criterion runs a self-contained
// experiment (or property suite) and reports one pass/fail line. Simulation
// criteria write their artifacts under the supplied output root.

#include <functional>
#include <string>
#include <vector>

namespace mkvcn {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

CriterionResult criterion_metric_closed_forms();                       // 1
CriterionResult criterion_contraction_inequality();                    // 2
CriterionResult criterion_convex_convergence(const std::string& out);  // 3
CriterionResult criterion_chaos_floor(const std::string& out);         // 4
CriterionResult criterion_ou_invariant(const std::string& out);        // 5
CriterionResult criterion_double_well_rate(const std::string& out);    // 6
CriterionResult criterion_zero_idio_collapse(const std::string& out);  // 7
CriterionResult criterion_gibbs_barycenter(const std::string& out);    // 8
CriterionResult criterion_property_suites(const std::string& out);     // 9

// All nine in order; exceptions inside a criterion convert to a FAIL whose
// detail carries the message. `on_result`, when set, is invoked after each
// criterion finishes (for incremental reporting).
std::vector<CriterionResult> run_all_criteria(
    const std::string& out_root,
    const std::function<void(const CriterionResult&)>& on_result = {});

}  // namespace mkvcn
