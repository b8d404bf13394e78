// Generate a small polycrystal, drop one slice and recover it with each
// baseline and with projection of a perfect prediction.

#include <cstdio>

#include "slicerec/evaluation.hpp"
#include "slicerec/synthgen.hpp"

using namespace slicerec;

int main() {
  GenSpec spec;
  spec.shape = {48, 9, 48};
  spec.mean_grain_size = 2.0;
  spec.mean_twins_per_grain = 1.0;
  spec.seed = 42;
  const GeneratedVolume vol = generate(spec);
  std::printf("generated %zu grains in %s\n", grain_count(vol.ids), dims_str(spec.shape).c_str());

  const std::size_t m = 4;
  RecoveryInput in;
  in.prev_ids = slice_dim2(vol.ids, m - 1);
  in.next_ids = slice_dim2(vol.ids, m + 1);
  in.dictionary = observed_dictionary(vol.orientations, vol.ids, m);
  in.pred_slice = slice_dim2(vol.orientations, m);  // stands in for a perfect model
  const IdSlice truth = slice_dim2(vol.ids, m);
  const BoundaryMask edges = extract_boundaries(vol.ids);
  const auto boundary = slice_dim2(edges, m);

  const IdSlice anchored = anchor(in);
  std::size_t open = 0;
  for (GrainId g : anchored.cells()) open += g == kUnassigned;
  std::printf("anchoring leaves %zu of %zu voxels open\n\n", open, anchored.size());

  struct Row {
    const char* name;
    IdSlice ids;
  };
  const Row rows[] = {{"copy_previous", copy_previous(in)},
                      {"copy_next", copy_next(in)},
                      {"knn_vote", knn_vote(in, 7)},
                      {"project(truth)", project(in)}};
  std::printf("%-16s %8s %9s\n", "method", "overall", "boundary");
  for (const auto& r : rows) {
    std::printf("%-16s %8.4f %9.4f\n", r.name, overall_accuracy(r.ids, truth),
                boundary_accuracy(r.ids, truth, boundary));
  }
}
