// Writes the bundled demo dataset: one informative sample from the default
// simulated population, its frame, lattice adjacency, and the true area
// proportions.
//
//   sae_make_demo <output-dir> [seed]

#include <cstdlib>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "sae/io.hpp"
#include "sae/numeric.hpp"
#include "sae/simulation.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: sae_make_demo <output-dir> [seed]\n";
    return 1;
  }
  const std::filesystem::path dir = argv[1];
  const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 20240;

  sae::SimulationConfig config;
  const auto layout = sae::build_population_layout(config, seed);
  const auto population = sae::realize_population(layout, sae::derive_seed(seed, 1));
  const auto sample = sae::select_covariates(sae::draw_informative_sample(population, sae::derive_seed(seed, 2)),
                                             sae::full_covariate_columns());
  const auto frame = sae::select_covariates(layout->frame(), sae::full_covariate_columns());
  const std::size_t p = sae::full_covariate_columns().size();
  using sae::format_number;

  std::ostringstream units;
  units << "unit_id,cluster_id,stratum_id,area_id,weight,y";
  for (std::size_t j = 1; j <= p; ++j) units << ",z" << j;
  units << '\n';
  for (const auto& u : sample.units) {
    units << u.unit_id << ',' << u.cluster_id << ',' << u.stratum_id << ',' << u.area_id << ','
          << format_number(u.weight) << ',' << u.response;
    for (double z : u.covariates) units << ',' << format_number(z);
    units << '\n';
  }
  sae::write_text(dir / "units.csv", units.str());

  std::ostringstream cells;
  cells << "cell_id,area_id,count";
  for (std::size_t j = 1; j <= p; ++j) cells << ",z" << j;
  cells << '\n';
  for (const auto& c : frame.cells) {
    cells << c.cell_id << ',' << c.area_id << ',' << format_number(c.count);
    for (double z : c.covariates) cells << ',' << format_number(z);
    cells << '\n';
  }
  sae::write_text(dir / "frame.csv", cells.str());

  // The area-level ICAR covariate doubles as the smoothing-model regressor.
  std::ostringstream area_cov;
  area_cov << "area_id,x1\n";
  std::vector<double> field(layout->area_ids.size(), 0.0);
  for (const auto& c : layout->clusters) field[c.area] = c.covariates[2];
  for (std::size_t a = 0; a < field.size(); ++a) area_cov << layout->area_ids[a] << ',' << format_number(field[a]) << '\n';
  sae::write_text(dir / "area_covariates.csv", area_cov.str());

  nlohmann::json adjacency;
  adjacency["areas"] = layout->area_ids;
  adjacency["edges"] = nlohmann::json::array();
  for (const auto& [a, b] : layout->area_structure->edges) {
    adjacency["edges"].push_back({layout->area_ids[a], layout->area_ids[b]});
  }
  sae::write_text(dir / "adjacency.json", adjacency.dump(1) + "\n");

  std::ostringstream truth;
  truth << "area_id,p\n";
  for (std::size_t a = 0; a < layout->area_ids.size(); ++a) {
    truth << layout->area_ids[a] << ',' << format_number(population.true_proportion[a]) << '\n';
  }
  sae::write_text(dir / "truth.csv", truth.str());
  std::cout << sample.size() << " units, " << frame.cells.size() << " frame cells, " << layout->area_ids.size()
            << " areas\n";
  return 0;
}
