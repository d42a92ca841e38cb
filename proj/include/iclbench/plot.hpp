#pragma once

#include <string>
#include <vector>

#include "iclbench/eval.hpp"
#include "iclbench/training.hpp"

// Static SVG charts. Output depends only on the inputs, so regenerating a
// plot from unchanged logs yields identical bytes.
namespace iclbench {

// Train and test loss against samples seen, log-scaled, one line per series
// (mean over seeds) with a min-max band across seeds. Logs must share the
// eval grid.
std::string loss_curve_svg(const std::string& title, const std::vector<RunLog>& seeds,
                           const std::vector<std::string>& provenance);

// Isotropic vs anisotropic test loss per configuration with CI whiskers and
// the relative degradation printed above each pair.
std::string robustness_bars_svg(const std::string& title, const std::vector<ConfigRow>& rows,
                                const std::vector<std::string>& provenance);

}  // namespace iclbench
