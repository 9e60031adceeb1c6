#pragma once

// Published benchmark results for the twelve n-m model setups on the proprietary
// body-shop line (means over runs). Used to check the metric implementation and by
// `vmas report --replicate-table2`.

#include <string>
#include <vector>

namespace vmas::reference {

struct PublishedRow {
  std::string model;          // e.g. "TF 5-2"
  std::vector<double> rmse;   // seconds, per step
  std::vector<double> f1;     // per step
  double tarmse;
  double f1_summary;
  double cta_percent;
};

inline constexpr double kPublishedK = 5.14;
inline constexpr double kPublishedTau = 0.5;
inline constexpr double kPublishedB = 0.10;

inline const std::vector<PublishedRow>& published_rows() {
  static const std::vector<PublishedRow> rows{
      {"GRU 5-2", {4.14, 4.12}, {0.94, 0.95}, 0.20, 0.94, 59.89},
      {"LSTM 5-2", {4.01, 4.06}, {0.95, 0.95}, 0.22, 0.95, 58.49},
      {"TF 5-2", {2.95, 3.29}, {0.80, 0.82}, 0.41, 0.80, 60.55},
      {"GRU 5-5", {4.07, 3.72, 3.50, 3.51, 4.29}, {0.94, 0.95, 0.89, 0.89, 0.92}, 0.24, 0.94, 58.67},
      {"LSTM 5-5", {4.03, 3.88, 3.84, 3.68, 4.09}, {0.94, 0.94, 0.89, 0.90, 0.93}, 0.23, 0.93, 58.11},
      {"TF 5-5", {3.04, 2.70, 2.43, 2.35, 2.77}, {0.79, 0.81, 0.79, 0.80, 0.78}, 0.44, 0.80, 61.69},
      {"GRU 7-5", {3.99, 3.97, 4.09, 3.77, 4.23}, {0.89, 0.89, 0.94, 0.94, 0.92}, 0.22, 0.89, 55.83},
      {"LSTM 7-5", {4.08, 4.15, 4.21, 3.92, 4.29}, {0.91, 0.90, 0.94, 0.94, 0.92}, 0.20, 0.91, 55.80},
      {"TF 7-5", {2.68, 2.55, 2.59, 2.57, 2.78}, {0.81, 0.81, 0.81, 0.81, 0.75}, 0.49, 0.81, 64.75},
      {"GRU 7-7", {4.10, 4.00, 4.24, 4.06, 4.15, 3.49, 3.28}, {0.87, 0.89, 0.91, 0.93, 0.85, 0.85, 0.85}, 0.21, 0.88,
       54.24},
      {"LSTM 7-7", {4.05, 4.07, 4.30, 3.82, 4.15, 3.51, 3.68}, {0.92, 0.90, 0.93, 0.94, 0.89, 0.88, 0.88}, 0.21, 0.92,
       56.22},
      {"TF 7-7", {2.72, 2.56, 2.57, 2.57, 2.66, 2.86, 2.70}, {0.80, 0.80, 0.79, 0.79, 0.75, 0.72, 0.76}, 0.48, 0.80,
       63.88},
  };
  return rows;
}

// Reported crossover points on the 7-7 setup.
inline constexpr double kPublishedCrossoverTfGru = 0.229;
inline constexpr double kPublishedCrossoverTfLstm = 0.308;

}  // namespace vmas::reference
