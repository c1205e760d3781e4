#include "tpc/trainer.hpp"

#include "tpc/trace.hpp"

namespace tpc {

void write_break_records(std::ostream& os, std::span<const BreakRecord> records) {
  os << "layer,token,p,restart,b_raw,b_reg,weight\n";
  for (const auto& r : records) {
    os << r.layer << ',' << r.token << ',' << format_number(r.pause) << ',' << format_number(r.restart) << ','
       << format_number(r.b_raw) << ',' << format_number(r.b_reg) << ',' << format_number(r.weight) << '\n';
  }
}

std::string format_metrics_row(const StepSummary& s) {
  std::string row = std::to_string(s.step);
  for (double v : {s.loss.task, s.loss.ponder, s.loss.distribution, s.loss.final_loss, s.mean_depth,
                   s.active_tokens_mean, s.lr}) {
    row += ',';
    row += format_number(v);
  }
  return row;
}

}  // namespace tpc
