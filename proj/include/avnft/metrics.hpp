#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "avnft/trainer.hpp"

namespace avnft {

/// Serializes one iteration record as a single JSON object (no newline).
/// Doubles use shortest round-trip formatting, so identical metrics always
/// produce identical bytes.
std::string metrics_to_json(const IterationMetrics& m);

/// Inverse of metrics_to_json; rejects lines that are not a metrics object.
IterationMetrics metrics_from_json(const std::string& line);

/// Appends records to a JSON-lines file, flushing after each one so partial
/// runs still leave a readable trail.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path);
    void append(const IterationMetrics& m);

private:
    std::ofstream out_;
};

/// Reads a whole JSON-lines metrics file; blank lines are skipped.
std::vector<IterationMetrics> read_metrics(const std::string& path);

/// Renders the scalar columns as CSV with a header row, one line per
/// iteration. Values survive a parse round trip exactly.
std::string metrics_to_csv(const std::vector<IterationMetrics>& series);

}  // namespace avnft
