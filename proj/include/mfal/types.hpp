#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfal {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = MatrixX<double>;
using VectorXd = VectorX<double>;

/// A dense embedding; one per sample, fixed dimension within a store.
using Embedding = VectorXd;

using Label = std::string;

/// Base of every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Persistent state failed a consistency check on load.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Output of a learner for one sample.
struct Prediction {
    VectorXd probs;                     // distribution over the label set, in label-set order
    std::vector<double> token_logprobs; // per-token log-probabilities of the emitted answer
};

} // namespace mfal
