#include "tpc/trace.hpp"

#include <algorithm>
#include <charconv>
#include <ostream>
#include <tuple>

namespace tpc {

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_trace_row(const TraceEvent& e) {
  std::string row;
  row.reserve(96);
  row += std::to_string(e.step);
  row += ',';
  row += std::to_string(e.layer);
  row += ',';
  row += std::to_string(e.token);
  for (double v : {e.pause, e.restart, e.b_raw, e.b_reg, e.cumulation}) {
    row += ',';
    row += format_number(v);
  }
  row += e.mask_before ? ",1" : ",0";
  row += e.mask_after ? ",1" : ",0";
  row += e.halted ? ",1" : ",0";
  return row;
}

CsvTraceWriter::CsvTraceWriter(std::ostream& os) : os_(&os) { write_line(kTraceHeader); }

CsvTraceWriter::CsvTraceWriter(const std::filesystem::path& path)
    : owned_(std::make_unique<std::ofstream>(path)), os_(owned_.get()) {
  if (!*owned_) {
    failed_ = true;
    error_ = "cannot open trace file " + path.string();
    return;
  }
  write_line(kTraceHeader);
}

void CsvTraceWriter::write_line(const std::string& line) {
  if (failed_) return;
  *os_ << line << '\n';
  if (!*os_) {
    failed_ = true;
    error_ = "trace sink write failed after " + std::to_string(rows_) + " rows";
  }
}

void CsvTraceWriter::on_event(const TraceEvent& event) {
  if (failed_) return;
  write_line(format_trace_row(event));
  if (!failed_) ++rows_;
}

void CsvTraceWriter::flush() {
  if (failed_) return;
  os_->flush();
  if (!*os_) {
    failed_ = true;
    error_ = "trace sink flush failed";
  }
}

void write_trace_csv(std::ostream& os, std::vector<TraceEvent> events) {
  std::stable_sort(events.begin(), events.end(), [](const TraceEvent& a, const TraceEvent& b) {
    return std::tie(a.step, a.layer, a.token) < std::tie(b.step, b.layer, b.token);
  });
  os << kTraceHeader << '\n';
  for (const auto& e : events) os << format_trace_row(e) << '\n';
}

}  // namespace tpc
