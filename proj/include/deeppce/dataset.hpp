#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "deeppce/error.hpp"
#include "deeppce/orthopoly.hpp"

namespace deeppce {

struct Dataset {
  Eigen::MatrixXd inputs;   // [N x D]
  Eigen::MatrixXd targets;  // [N x O]
  std::vector<PolyFamily> marginals;
  std::string provenance;

  Eigen::Index size() const noexcept { return inputs.rows(); }
  int input_dim() const noexcept { return static_cast<int>(inputs.cols()); }
  int output_dim() const noexcept { return static_cast<int>(targets.cols()); }

  void validate() const {
    require(inputs.rows() == targets.rows(), ErrorCode::DimensionMismatch,
            "dataset: input and target row counts differ");
    require(marginals.size() == static_cast<std::size_t>(inputs.cols()), ErrorCode::DimensionMismatch,
            "dataset: need one marginal per input column");
  }

  Dataset rows(const std::vector<std::size_t>& index) const {
    Dataset out;
    out.inputs.resize(static_cast<Eigen::Index>(index.size()), inputs.cols());
    out.targets.resize(static_cast<Eigen::Index>(index.size()), targets.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
      out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(index[i]));
      out.targets.row(static_cast<Eigen::Index>(i)) = targets.row(static_cast<Eigen::Index>(index[i]));
    }
    out.marginals = marginals;
    out.provenance = provenance;
    return out;
  }
};

}  // namespace deeppce
