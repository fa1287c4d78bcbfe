// SPDX-License-Identifier: Apache-2.0
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "attsets/aggregators.hpp"
#include "attsets/errors.hpp"
#include "attsets/metrics.hpp"
#include "attsets/selftest.hpp"
#include "attsets/synthdata.hpp"

namespace py = pybind11;
using namespace attsets;

namespace {

using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const F64Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
  const auto& s = t.shape();
  py::array_t<double> out(std::vector<py::ssize_t>(s.begin(), s.end()));
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::dict weights_to_dict(const agg::AggregatorParams& p) {
  py::dict d;
  for (const auto& [name, w] : p.weights) d[py::str(name)] = to_array(w);
  return d;
}

agg::AggregatorParams params_from(const std::string& kind, std::size_t width, const py::dict& weights,
                                  bool use_bias) {
  agg::AggregatorParams p = agg::aggregator_init(agg::parse_aggregator_kind(kind), width, 0, use_bias);
  for (auto& [name, w] : p.weights) {
    if (!weights.contains(name)) throw ContractError("missing weight '" + name + "'");
    Tensor given = to_tensor(weights[py::str(name)].cast<F64Array>());
    if (given.shape() != w.shape()) throw ShapeError("weight '" + name + "' has the wrong shape");
    w = given;
  }
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Attentional set aggregation for multi-view 3D reconstruction.";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<GenerationError>(m, "GenerationError", PyExc_RuntimeError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("aggregator_kinds", [] {
    std::vector<std::string> names;
    for (auto k : agg::all_aggregator_kinds()) names.emplace_back(agg::to_string(k));
    return names;
  });

  m.def(
      "init_weights",
      [](const std::string& kind, std::size_t width, std::uint64_t seed, bool use_bias) {
        return weights_to_dict(agg::aggregator_init(agg::parse_aggregator_kind(kind), width, seed, use_bias));
      },
      py::arg("kind"), py::arg("width"), py::arg("seed") = 0, py::arg("use_bias") = false,
      "Initial weights for an aggregator as a dict of arrays.");

  m.def(
      "aggregate",
      [](const F64Array& set, const std::string& kind, const py::dict& weights, bool use_bias) -> py::tuple {
        if (set.ndim() != 2) throw ShapeError("set must be a 2-D [N x D] array");
        const auto k = agg::parse_aggregator_kind(kind);
        const std::size_t d = static_cast<std::size_t>(set.shape(1));
        std::size_t width = d;
        if (k == agg::AggregatorKind::attsets_conv) {
          if (!weights.contains("W")) throw ContractError("missing weight 'W'");
          width = static_cast<std::size_t>(weights["W"].cast<F64Array>().shape(0));
        }
        const auto out = agg::aggregate(to_tensor(set), params_from(kind, width, weights, use_bias));
        py::object scores = py::none();
        if (out.attention) scores = to_array(out.attention->scores);
        return py::make_tuple(to_array(out.output), scores);
      },
      py::arg("set"), py::arg("kind"), py::arg("weights") = py::dict(), py::arg("use_bias") = false,
      "Aggregates an [N x D] set into [D]. Returns (output, attention scores or None).");

  m.def("threshold_grid", &eval::threshold_grid);

  m.def(
      "iou",
      [](const F64Array& pred, const U8Array& gt, double p) {
        return eval::iou(std::span<const double>(pred.data(), pred.size()),
                         std::span<const std::uint8_t>(gt.data(), gt.size()), p);
      },
      py::arg("pred"), py::arg("gt"), py::arg("threshold"));

  m.def(
      "search_threshold",
      [](const F64Array& preds, const U8Array& truths, std::optional<std::vector<double>> thresholds) {
        if (preds.ndim() != 2 || truths.ndim() != 2 || preds.shape(0) != truths.shape(0) ||
            preds.shape(1) != truths.shape(1))
          throw ShapeError("predictions and truths must both be [samples x voxels]");
        const std::size_t voxels = static_cast<std::size_t>(truths.shape(1));
        const auto side = static_cast<std::size_t>(std::llround(std::cbrt(static_cast<double>(voxels))));
        if (side * side * side != voxels) throw ShapeError("voxel count must be a cube");
        std::vector<data::BinaryGrid> grids;
        for (py::ssize_t s = 0; s < truths.shape(0); ++s) {
          const std::uint8_t* row = truths.data() + s * truths.shape(1);
          grids.push_back({side, std::vector<std::uint8_t>(row, row + voxels)});
        }
        const auto grid = thresholds.value_or(eval::threshold_grid());
        const auto r = eval::search_threshold(std::span<const double>(preds.data(), preds.size()), grids, grid);
        return py::make_tuple(r.threshold, r.mean_iou);
      },
      py::arg("predictions"), py::arg("truths"), py::arg("thresholds") = py::none(),
      "Returns (threshold, mean IoU); ties go to the lower threshold.");

  m.def(
      "make_sample",
      [](std::uint64_t id, std::uint32_t grid_side, std::uint32_t image_side, std::uint64_t seed) {
        data::DatasetMeta meta;
        meta.grid_side = grid_side;
        meta.image_side = image_side;
        meta.seed = seed;
        const auto s = data::make_sample(meta, id);
        py::array_t<std::uint8_t> gt({grid_side, grid_side, grid_side});
        std::copy(s.gt.occ.begin(), s.gt.occ.end(), gt.mutable_data());
        py::array_t<double> views({static_cast<std::size_t>(meta.views), std::size_t{image_side},
                                   std::size_t{image_side}});
        std::copy(s.views.begin(), s.views.end(), views.mutable_data());
        return py::make_tuple(gt, views);
      },
      py::arg("id"), py::arg("grid_side") = 16, py::arg("image_side") = 16, py::arg("seed") = 1,
      "Procedural shape `id`: (occupancy [G,G,G] uint8, depth views [K,S,S]).");

  m.def(
      "selftest",
      [](std::uint64_t seed) {
        std::vector<py::tuple> rows;
        for (const auto& r : selftest::run_all(seed)) rows.push_back(py::make_tuple(r.name, r.passed, r.detail));
        return rows;
      },
      py::arg("seed") = 0, "Runs the invariant suite: list of (name, passed, detail).");
}
