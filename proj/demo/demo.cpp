// Selects variables on a simulated linear dataset with 3 active covariates.
#include <cstdio>

#include "simcal/simcal.hpp"

int main() {
  using namespace simcal;
  ScenarioConfig c;
  c.n = 200;
  c.p = 30;
  c.n_active = 3;
  c.snr_target = 0.5;
  c.master_seed = 7;
  const ReplicateData rep = generate_replicate(c, 0);

  std::printf("true support:");
  for (int j : rep.support) std::printf(" %d", j + 1);
  std::printf("\n");

  SelectOptions opt;
  opt.alpha = 0.05;
  opt.N = 100;
  const SelectionResult res = select(rep.data, opt, Rng(11));
  for (const auto& st : res.steps) {
    std::printf("step %d  enters", st.step);
    for (int j : st.entering) std::printf(" %d", j + 1);
    std::printf("  lambda=%.5f  p=%.4f  pFS=%.4f\n", st.lambda, st.p, st.pfs);
  }
  std::printf("selected:");
  for (int j : res.selected) std::printf(" %d", j + 1);
  std::printf("\n");
  return 0;
}
