#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ssl2/eval/experiments.hpp"

namespace ssl2 {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_results_csv(const std::string& path, const ResultsTable& table) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IOError("cannot write " + path);

  if (table.protocol == "crossval") {
    f << "method";
    for (const auto& s : table.settings) f << "," << s;
    f << ",avg,std\n";
    for (std::size_t r = 0; r < table.methods.size(); ++r) {
      f << table.methods[r];
      const auto pooled = table.row_values(r);
      double mean = 0;
      for (double v : pooled) mean += v;
      mean /= pooled.empty() ? 1.0 : static_cast<double>(pooled.size());
      double var = 0;
      for (double v : pooled) var += (v - mean) * (v - mean);
      const double sd = pooled.size() > 1 ? std::sqrt(var / static_cast<double>(pooled.size())) : 0.0;
      for (std::size_t c = 0; c < table.settings.size(); ++c)
        f << "," << format_value(table.cell_mean(r, c));
      f << "," << format_value(mean) << "," << format_value(sd) << "\n";
    }
  } else if (table.protocol == "train_size") {
    f << "method";
    for (const auto& s : table.settings) f << "," << s << " labeled samples";
    f << "\n";
    for (std::size_t r = 0; r < table.methods.size(); ++r) {
      f << table.methods[r];
      for (std::size_t c = 0; c < table.settings.size(); ++c)
        f << "," << format_value(table.cell_mean(r, c)) << "±" << format_value(table.cell_std(r, c));
      f << "\n";
    }
  } else {
    f << "method";
    for (const auto& s : table.settings) f << "," << s;
    f << "\n";
    for (std::size_t r = 0; r < table.methods.size(); ++r) {
      f << table.methods[r];
      for (std::size_t c = 0; c < table.settings.size(); ++c)
        f << "," << format_value(table.cell_mean(r, c));
      f << "\n";
    }
  }
  if (!f) throw IOError("write failed: " + path);
}

void write_results_json(const std::string& path, const ResultsTable& table) {
  nlohmann::json j;
  j["protocol"] = table.protocol;
  j["methods"] = table.methods;
  j["settings"] = table.settings;
  j["values"] = table.values;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IOError("cannot write " + path);
  f << j.dump(2) << "\n";
}

ResultsTable read_results_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingFile("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw IOError("empty results csv: " + path);
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "method") throw IOError("bad results csv header: " + path);

  ResultsTable table;
  const bool crossval = header.back() == "std" && header[header.size() - 2] == "avg";
  const std::size_t ncols = crossval ? header.size() - 3 : header.size() - 1;
  table.protocol = crossval ? "crossval" : "generic";
  for (std::size_t c = 0; c < ncols; ++c) table.settings.push_back(header[c + 1]);

  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < ncols + 1) throw IOError("short row in " + path);
    table.methods.push_back(cells[0]);
    std::vector<std::vector<double>> row;
    for (std::size_t c = 0; c < ncols; ++c) {
      const std::string& cell = cells[c + 1];
      std::vector<double> vals;
      const auto pm = cell.find("±");
      if (pm != std::string::npos) {
        vals.push_back(std::stod(cell.substr(0, pm)));
        vals.push_back(std::stod(cell.substr(pm + std::string("±").size())));  // mean, std pair
        table.protocol = "train_size";
      } else {
        vals.push_back(std::stod(cell));
      }
      row.push_back(std::move(vals));
    }
    table.values.push_back(std::move(row));
  }
  return table;
}

}  // namespace ssl2
