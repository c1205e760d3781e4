#pragma once

// Token-lifecycle events and the CSV sinks that record them.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace tpc {

/// One token at one layer of the halting state machine.
struct TraceEvent {
  std::int64_t step = 0;
  int layer = 0;
  std::int64_t token = 0;
  double pause = 0;
  double restart = 0;
  double b_raw = 0;
  double b_reg = 0;
  double cumulation = 0;
  bool mask_before = true;
  bool mask_after = true;
  bool halted = false;
};

inline constexpr const char* kTraceHeader =
    "step,layer,token,p,restart,b_raw,b_reg,cumulation,mask_before,mask_after,halted";

class TraceSink {
 public:
  virtual ~TraceSink() = default;
  virtual void on_event(const TraceEvent& event) = 0;
};

/// Collects events in memory.
class VectorSink final : public TraceSink {
 public:
  void on_event(const TraceEvent& event) override { events.push_back(event); }
  std::vector<TraceEvent> events;
};

/// Shortest round-trip decimal form of a double.
std::string format_number(double v);

std::string format_trace_row(const TraceEvent& e);

/// Writes the 11-column trace CSV. A failing stream is reported through
/// failed()/error() and never throws, so training can carry on.
class CsvTraceWriter final : public TraceSink {
 public:
  explicit CsvTraceWriter(std::ostream& os);
  explicit CsvTraceWriter(const std::filesystem::path& path);

  void on_event(const TraceEvent& event) override;
  void flush();

  bool failed() const { return failed_; }
  const std::string& error() const { return error_; }
  std::uint64_t rows_written() const { return rows_; }

 private:
  void write_line(const std::string& line);

  std::unique_ptr<std::ofstream> owned_;
  std::ostream* os_ = nullptr;
  bool failed_ = false;
  std::string error_;
  std::uint64_t rows_ = 0;
};

/// Sorts events into (step, layer, token) order and writes header + rows.
void write_trace_csv(std::ostream& os, std::vector<TraceEvent> events);

}  // namespace tpc
