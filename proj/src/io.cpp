#include "sae/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "sae/error.hpp"
#include "sae/numeric.hpp"

namespace sae {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line, const std::string& where) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        current += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (quoted) throw ValidationError(where + ": unterminated quoted field");
  fields.push_back(trim(current));
  return fields;
}

std::string where(const CsvTable& t, std::size_t row) {
  return t.source + " line " + std::to_string(t.line[row]);
}

double parse_double(const std::string& text, const std::string& context) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ValidationError(context + ": '" + text + "' is not a finite number");
  }
  return value;
}

void require_unique(const std::vector<std::string>& ids, const std::string& what) {
  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) throw ValidationError("duplicate " + what + " '" + id + "'");
  }
}

}  // namespace

std::size_t CsvTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw ValidationError(source + ": missing required column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<std::size_t> CsvTable::numbered_columns(const std::string& prefix) const {
  std::vector<std::size_t> out;
  for (std::size_t j = 1;; ++j) {
    const auto it = std::find(header.begin(), header.end(), prefix + std::to_string(j));
    if (it == header.end()) break;
    out.push_back(static_cast<std::size_t>(it - header.begin()));
  }
  return out;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  CsvTable t;
  t.source = path.filename().string();
  std::string line;
  std::size_t number = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++number;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    auto fields = split_csv_line(stripped, t.source + " line " + std::to_string(number));
    if (!have_header) {
      t.header = std::move(fields);
      require_unique(t.header, "column in " + t.source + ": column");
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw ValidationError(t.source + " line " + std::to_string(number) + ": expected " +
                            std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
    t.line.push_back(number);
  }
  if (!have_header) throw ValidationError(t.source + ": file is empty");
  return t;
}

SurveyDataset read_units(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t c_unit = t.column("unit_id"), c_cluster = t.column("cluster_id"),
                    c_stratum = t.column("stratum_id"), c_area = t.column("area_id"), c_weight = t.column("weight"),
                    c_y = t.column("y");
  const auto c_z = t.numbered_columns("z");
  SurveyDataset data;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string at = where(t, r);
    SampledUnit u;
    u.unit_id = row[c_unit];
    if (u.unit_id.empty()) throw ValidationError(at + ": empty unit_id");
    if (const auto [it, fresh] = seen.emplace(u.unit_id, t.line[r]); !fresh) {
      throw ValidationError(at + ": duplicate unit_id '" + u.unit_id + "' (first seen on line " +
                            std::to_string(it->second) + ")");
    }
    u.cluster_id = row[c_cluster];
    u.stratum_id = row[c_stratum];
    u.area_id = row[c_area];
    if (u.area_id.empty()) throw ValidationError(at + ": empty area_id");
    u.weight = parse_double(row[c_weight], at + ", weight");
    if (!(u.weight > 0.0)) throw ValidationError(at + ": weight must be positive, found " + row[c_weight]);
    const double y = parse_double(row[c_y], at + ", y");
    if (y != 0.0 && y != 1.0) throw ValidationError(at + ": y must be 0 or 1, found " + row[c_y]);
    u.response = y == 1.0 ? 1 : 0;
    for (std::size_t j = 0; j < c_z.size(); ++j) {
      u.covariates.push_back(parse_double(row[c_z[j]], at + ", z" + std::to_string(j + 1)));
    }
    data.units.push_back(std::move(u));
  }
  if (data.empty()) throw ValidationError(t.source + ": no units");
  return data;
}

PopulationFrame read_frame(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t c_cell = t.column("cell_id"), c_area = t.column("area_id"), c_count = t.column("count");
  const auto c_z = t.numbered_columns("z");
  PopulationFrame frame;
  std::set<std::string> seen;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string at = where(t, r);
    FrameCell cell;
    cell.cell_id = row[c_cell];
    if (!seen.insert(cell.cell_id).second) throw ValidationError(at + ": duplicate cell_id '" + cell.cell_id + "'");
    cell.area_id = row[c_area];
    if (cell.area_id.empty()) throw ValidationError(at + ": empty area_id");
    cell.count = parse_double(row[c_count], at + ", count");
    if (!(cell.count > 0.0)) throw ValidationError(at + ": count must be positive, found " + row[c_count]);
    for (std::size_t j = 0; j < c_z.size(); ++j) {
      cell.covariates.push_back(parse_double(row[c_z[j]], at + ", z" + std::to_string(j + 1)));
    }
    frame.cells.push_back(std::move(cell));
  }
  if (frame.cells.empty()) throw ValidationError(t.source + ": no frame cells");
  return frame;
}

AreaCovariates read_area_covariates(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t c_area = t.column("area_id");
  const auto c_x = t.numbered_columns("x");
  AreaCovariates out;
  for (std::size_t j = 0; j < c_x.size(); ++j) out.names.push_back("x" + std::to_string(j + 1));
  out.values.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(c_x.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string at = where(t, r);
    out.area_ids.push_back(t.rows[r][c_area]);
    for (std::size_t j = 0; j < c_x.size(); ++j) {
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
          parse_double(t.rows[r][c_x[j]], at + ", " + out.names[j]);
    }
  }
  for (std::size_t r = 0; r < out.area_ids.size(); ++r) {
    for (std::size_t s = 0; s < r; ++s) {
      if (out.area_ids[s] == out.area_ids[r]) {
        throw ValidationError(where(t, r) + ": duplicate area_id '" + out.area_ids[r] + "'");
      }
    }
  }
  return out;
}

AdjacencyInput read_adjacency(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  const std::string name = path.filename().string();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(name + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("areas") || !doc["areas"].is_array()) {
    throw ValidationError(name + ": expected an object with an \"areas\" array");
  }
  AdjacencyInput adj;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& a : doc["areas"]) {
    if (!a.is_string()) throw ValidationError(name + ": area ids must be strings");
    adj.areas.push_back(a.get<std::string>());
    if (!index.emplace(adj.areas.back(), adj.areas.size() - 1).second) {
      throw ValidationError(name + ": duplicate area '" + adj.areas.back() + "'");
    }
  }
  if (!doc.contains("edges") || !doc["edges"].is_array()) {
    throw ValidationError(name + ": expected an \"edges\" array");
  }
  auto endpoint = [&](const nlohmann::json& v, std::size_t e) -> std::size_t {
    if (v.is_string()) {
      const auto it = index.find(v.get<std::string>());
      if (it == index.end()) {
        throw ValidationError(name + ": edge " + std::to_string(e) + " references unknown area '" +
                              v.get<std::string>() + "'");
      }
      return it->second;
    }
    if (v.is_number_unsigned() && v.get<std::size_t>() < adj.areas.size()) return v.get<std::size_t>();
    throw ValidationError(name + ": edge " + std::to_string(e) + " has an invalid endpoint " + v.dump());
  };
  std::size_t e = 0;
  for (const auto& edge : doc["edges"]) {
    if (!edge.is_array() || edge.size() != 2) {
      throw ValidationError(name + ": edge " + std::to_string(e) + " is not a pair");
    }
    adj.edges.emplace_back(endpoint(edge[0], e), endpoint(edge[1], e));
    ++e;
  }
  return adj;
}

IngestedData assemble(SurveyDataset units, std::optional<PopulationFrame> frame,
                      std::optional<AdjacencyInput> adjacency, std::optional<AreaCovariates> covariates) {
  std::set<std::string> present;
  for (const auto& u : units.units) present.insert(u.area_id);
  if (frame) {
    for (const auto& c : frame->cells) present.insert(c.area_id);
  }

  std::vector<std::string> order;
  if (adjacency) {
    const std::set<std::string> listed(adjacency->areas.begin(), adjacency->areas.end());
    for (const auto& a : adjacency->areas) {
      if (!present.count(a)) {
        throw ValidationError("adjacency area '" + a + "' appears in neither the units nor the frame");
      }
    }
    for (const auto& a : present) {
      if (!listed.count(a)) throw ValidationError("area '" + a + "' is missing from the adjacency file");
    }
    order = adjacency->areas;
  } else {
    order.assign(present.begin(), present.end());
  }

  std::map<std::string, double> population;
  if (frame) {
    for (const auto& c : frame->cells) population[c.area_id] += c.count;
  }
  std::vector<AreaInfo> infos;
  for (const auto& a : order) {
    AreaInfo info{a, std::nullopt};
    if (frame) info.population_size = population.count(a) ? std::optional<double>(population[a]) : std::nullopt;
    infos.push_back(std::move(info));
  }

  IngestedData out;
  out.partition = AreaPartition(std::move(infos));
  validate_dataset(units, out.partition);
  if (frame) {
    validate_frame(*frame, out.partition);
    if (frame->num_covariates() != units.num_covariates()) {
      throw ValidationError("units have " + std::to_string(units.num_covariates()) + " covariates, frame has " +
                            std::to_string(frame->num_covariates()));
    }
  }
  if (adjacency) {
    out.structure = std::make_shared<const SpatialStructure>(build_spatial_structure(order, adjacency->edges));
  }

  const auto A = static_cast<Eigen::Index>(order.size());
  const Eigen::Index q = covariates ? static_cast<Eigen::Index>(covariates->names.size()) : 0;
  out.area_design.resize(A, q + 1);
  out.area_design.col(0).setOnes();
  out.area_design_names.push_back("intercept");
  if (covariates) {
    std::vector<bool> filled(order.size(), false);
    for (std::size_t r = 0; r < covariates->area_ids.size(); ++r) {
      const auto idx = out.partition.index_of(covariates->area_ids[r]);
      if (!idx) throw ValidationError("area covariates list unknown area '" + covariates->area_ids[r] + "'");
      out.area_design.block(static_cast<Eigen::Index>(*idx), 1, 1, q) =
          covariates->values.row(static_cast<Eigen::Index>(r));
      filled[*idx] = true;
    }
    for (std::size_t a = 0; a < order.size(); ++a) {
      if (!filled[a]) throw ValidationError("area covariates are missing area '" + order[a] + "'");
    }
    out.area_design_names.insert(out.area_design_names.end(), covariates->names.begin(), covariates->names.end());
  }
  out.units = std::move(units);
  out.frame = std::move(frame);
  return out;
}

IngestedData ingest(const IngestPaths& paths) {
  auto units = read_units(paths.units);
  std::optional<PopulationFrame> frame;
  if (paths.frame) frame = read_frame(*paths.frame);
  std::optional<AdjacencyInput> adjacency;
  if (paths.adjacency) adjacency = read_adjacency(*paths.adjacency);
  std::optional<AreaCovariates> covariates;
  if (paths.area_covariates) covariates = read_area_covariates(*paths.area_covariates);
  return assemble(std::move(units), std::move(frame), std::move(adjacency), std::move(covariates));
}

std::vector<EstimateRow> direct_rows(const AreaEstimateSet& estimates, const std::string& method) {
  std::vector<EstimateRow> rows;
  for (const auto& a : estimates.areas) {
    EstimateRow row;
    row.area_id = a.area_id;
    row.method = method;
    row.n = a.sample_size;
    row.flags = a.flags;
    if (a.has_estimate()) row.estimate = a.estimate;
    if (std::isfinite(a.variance) && a.variance >= 0.0) {
      row.se = std::sqrt(a.variance);
      row.lower90 = std::max(0.0, a.estimate - kZ90 * row.se);
      row.upper90 = std::min(1.0, a.estimate + kZ90 * row.se);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<EstimateRow> smoothed_rows(const SmoothingResult& result, const AreaEstimateSet& input,
                                       const std::string& method) {
  std::vector<EstimateRow> rows;
  for (std::size_t a = 0; a < result.areas.size(); ++a) {
    const auto& ap = result.areas[a];
    EstimateRow row;
    row.area_id = ap.area_id;
    row.method = method;
    row.estimate = ap.p.median;
    row.se = ap.p.sd;
    row.lower90 = ap.p.lower90;
    row.upper90 = ap.p.upper90;
    row.n = input.areas[a].sample_size;
    row.flags = ap.flags;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_number(double value) {
  if (!std::isfinite(value)) return "NA";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw NumericalError("cannot format number");
  return std::string(buf, ptr);
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

void write_estimates(const std::filesystem::path& path, const std::vector<EstimateRow>& rows) {
  std::ostringstream os;
  os << "area_id,method,estimate,se,lower90,upper90,n_a,flags\n";
  for (const auto& r : rows) {
    os << r.area_id << ',' << r.method << ',' << format_number(r.estimate) << ',' << format_number(r.se) << ','
       << format_number(r.lower90) << ',' << format_number(r.upper90) << ',' << r.n << ','
       << flags_to_string(r.flags) << '\n';
  }
  write_text(path, os.str());
}

}  // namespace sae
