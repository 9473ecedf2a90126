#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mdgen/error.hpp"

namespace mdgen {

/// One-hidden-layer tanh projection with L2-normalized output:
///   y = normalize(W2^T tanh(W1^T x + b1) + b2)
template <typename Scalar>
struct MlpAdapter {
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

    Matrix w1;  // d_in x d_h
    Vector b1;  // d_h
    Matrix w2;  // d_h x d_out
    Vector b2;  // d_out

    Eigen::Index in_dim() const noexcept { return w1.rows(); }
    Eigen::Index hidden_dim() const noexcept { return w1.cols(); }
    Eigen::Index out_dim() const noexcept { return w2.cols(); }

    static MlpAdapter zeros(Eigen::Index d_in, Eigen::Index d_h, Eigen::Index d_out) {
        return {Matrix::Zero(d_in, d_h), Vector::Zero(d_h), Matrix::Zero(d_h, d_out), Vector::Zero(d_out)};
    }

    /// Glorot-uniform weights, zero biases.
    template <typename Urng>
    static MlpAdapter glorot(Eigen::Index d_in, Eigen::Index d_h, Eigen::Index d_out, Urng& rng) {
        MlpAdapter a = zeros(d_in, d_h, d_out);
        auto fill = [&](Matrix& m) {
            const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
            std::uniform_real_distribution<double> u(-limit, limit);
            for (Eigen::Index r = 0; r < m.rows(); ++r)
                for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = static_cast<Scalar>(u(rng));
        };
        fill(a.w1);
        fill(a.w2);
        return a;
    }

    bool dims_consistent() const {
        return b1.size() == w1.cols() && w2.rows() == w1.cols() && b2.size() == w2.cols();
    }
    bool all_finite() const { return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite(); }

    template <typename U>
    MlpAdapter<U> cast() const {
        return {w1.template cast<U>(), b1.template cast<U>(), w2.template cast<U>(), b2.template cast<U>()};
    }

    bool operator==(const MlpAdapter& o) const {
        return w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
    }
};

/// Parameter-shaped gradient container.
template <typename Scalar>
using AdapterGradients = MlpAdapter<Scalar>;

/// Intermediate values of a batched forward pass (rows are samples).
template <typename Scalar>
struct AdapterActivations {
    typename MlpAdapter<Scalar>::Matrix hidden;  // tanh(X W1 + b1)
    typename MlpAdapter<Scalar>::Vector norms;   // |Z_i| before normalization
    typename MlpAdapter<Scalar>::Matrix output;  // unit rows
};

template <typename Scalar, typename Derived>
AdapterActivations<Scalar> forward_batch(const MlpAdapter<Scalar>& a, const Eigen::MatrixBase<Derived>& inputs) {
    if (inputs.cols() != a.in_dim()) throw InvalidArgument("adapter input dimension mismatch");
    AdapterActivations<Scalar> act;
    act.hidden = ((inputs * a.w1).rowwise() + a.b1.transpose()).array().tanh().matrix();
    act.output = (act.hidden * a.w2).rowwise() + a.b2.transpose();
    act.norms = act.output.rowwise().norm();
    for (Eigen::Index i = 0; i < act.output.rows(); ++i) {
        if (!(act.norms(i) > Scalar(0))) throw NumericError("adapter output has zero norm");
        act.output.row(i) /= act.norms(i);
    }
    return act;
}

/// Unit-norm adapter output for one input vector.
template <typename Scalar, typename Derived>
typename MlpAdapter<Scalar>::Vector forward(const MlpAdapter<Scalar>& a, const Eigen::MatrixBase<Derived>& x) {
    return forward_batch(a, x.transpose()).output.row(0).transpose();
}

/// Mean InfoNCE over in-batch negatives: rows of `chat` and `music` are unit
/// vectors, row i of each forms the positive pair.
template <typename DerivedC, typename DerivedM>
typename DerivedC::Scalar infonce_loss(const Eigen::MatrixBase<DerivedC>& chat, const Eigen::MatrixBase<DerivedM>& music,
                                       typename DerivedC::Scalar tau) {
    using Scalar = typename DerivedC::Scalar;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    if (chat.rows() != music.rows() || chat.cols() != music.cols()) throw InvalidArgument("InfoNCE shape mismatch");
    if (chat.rows() < 2) throw InvalidArgument("InfoNCE needs at least 2 pairs");
    if (!(tau > Scalar(0))) throw InvalidArgument("temperature must be positive");
    if (!chat.allFinite() || !music.allFinite()) throw NumericError("non-finite InfoNCE input");
    const Matrix logits = (chat * music.transpose()) / tau;
    Scalar total(0);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const Scalar m = logits.row(i).maxCoeff();
        const Scalar lse = m + std::log((logits.row(i).array() - m).exp().sum());
        total += lse - logits(i, i);
    }
    return total / static_cast<Scalar>(logits.rows());
}

/// Text (chat-side) and music adapters. When `shared`, `text` serves both sides.
template <typename Scalar>
struct AdapterPair {
    MlpAdapter<Scalar> text;
    MlpAdapter<Scalar> music;
    bool shared = false;

    const MlpAdapter<Scalar>& music_side() const { return shared ? text : music; }
};

template <typename Scalar>
struct PairGradients {
    Scalar loss{};
    AdapterGradients<Scalar> text;
    AdapterGradients<Scalar> music;  // zero-sized when shared
};

namespace detail {

template <typename Scalar, typename Derived>
AdapterGradients<Scalar> backprop(const MlpAdapter<Scalar>& a, const AdapterActivations<Scalar>& act,
                                  const Eigen::MatrixBase<Derived>& inputs,
                                  const typename MlpAdapter<Scalar>::Matrix& d_output) {
    using Matrix = typename MlpAdapter<Scalar>::Matrix;
    // Through y = z / |z|: dz = (dy - y (y . dy)) / |z|
    Matrix dz = d_output;
    for (Eigen::Index i = 0; i < dz.rows(); ++i) {
        const Scalar proj = act.output.row(i).dot(d_output.row(i));
        dz.row(i) = (d_output.row(i) - proj * act.output.row(i)) / act.norms(i);
    }
    AdapterGradients<Scalar> g;
    g.w2 = act.hidden.transpose() * dz;
    g.b2 = dz.colwise().sum().transpose();
    const Matrix dpre = ((dz * a.w2.transpose()).array() * (Scalar(1) - act.hidden.array().square())).matrix();
    g.w1 = inputs.transpose() * dpre;
    g.b1 = dpre.colwise().sum().transpose();
    return g;
}

}  // namespace detail

/// Loss and exact analytic gradients of InfoNCE composed with both adapters.
template <typename Scalar, typename DerivedX, typename DerivedY>
PairGradients<Scalar> infonce_gradients(const AdapterPair<Scalar>& adapters, const Eigen::MatrixBase<DerivedX>& chat_in,
                                        const Eigen::MatrixBase<DerivedY>& music_in, Scalar tau) {
    using Matrix = typename MlpAdapter<Scalar>::Matrix;
    const auto& text = adapters.text;
    const auto& music = adapters.music_side();
    const auto ca = forward_batch(text, chat_in);
    const auto ma = forward_batch(music, music_in);

    PairGradients<Scalar> out;
    out.loss = infonce_loss(ca.output, ma.output, tau);

    const Eigen::Index n = ca.output.rows();
    const Matrix logits = (ca.output * ma.output.transpose()) / tau;
    Matrix g(n, n);  // dL/dlogits = (softmax - I) / n
    for (Eigen::Index i = 0; i < n; ++i) {
        const Scalar m = logits.row(i).maxCoeff();
        const auto e = (logits.row(i).array() - m).exp();
        g.row(i) = (e / e.sum()).matrix();
        g(i, i) -= Scalar(1);
    }
    g /= static_cast<Scalar>(n);
    const Matrix d_chat = g * ma.output / tau;
    const Matrix d_music = g.transpose() * ca.output / tau;

    out.text = detail::backprop(text, ca, chat_in, d_chat);
    auto mg = detail::backprop(music, ma, music_in, d_music);
    if (adapters.shared) {
        out.text.w1 += mg.w1;
        out.text.b1 += mg.b1;
        out.text.w2 += mg.w2;
        out.text.b2 += mg.b2;
    } else {
        out.music = std::move(mg);
    }
    return out;
}

struct TrainConfig {
    double learning_rate = 0.1;
    double tau = 0.07;
    std::size_t batch_size = 32;
    int epochs = 10;
    std::uint64_t seed = 42;
    Eigen::Index hidden_dim = 0;  // 0 = input dim
    Eigen::Index out_dim = 0;     // 0 = input dim
    bool shared = false;

    void validate() const;
};

struct TrainResult {
    AdapterPair<double> adapters;
    std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Glorot-initialized adapters for the given dims, drawn from `seed`.
AdapterPair<double> init_adapters(Eigen::Index chat_dim, Eigen::Index music_dim, const TrainConfig& cfg);

/// Plain SGD over seeded shuffled mini-batches (a trailing batch of one pair is
/// dropped). Rows of `chat_in`/`music_in` are paired. Throws NumericError with
/// the epoch index if the loss becomes non-finite.
TrainResult train(const Eigen::MatrixXd& chat_in, const Eigen::MatrixXd& music_in, const TrainConfig& cfg);
TrainResult train(const Eigen::MatrixXd& chat_in, const Eigen::MatrixXd& music_in, const TrainConfig& cfg,
                  AdapterPair<double> init);

nlohmann::json adapter_to_json(const MlpAdapter<double>& a);
MlpAdapter<double> adapter_from_json(const nlohmann::json& j);
void save_checkpoint(const AdapterPair<double>& adapters, double tau, const std::filesystem::path& path);
AdapterPair<double> load_checkpoint(const std::filesystem::path& path);

}  // namespace mdgen
