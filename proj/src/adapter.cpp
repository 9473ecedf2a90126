#include "mdgen/adapter.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace mdgen {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0)) throw InvalidArgument("learning rate must be >= 0");
    if (!(tau > 0.0)) throw InvalidArgument("temperature must be > 0");
    if (batch_size < 2) throw InvalidArgument("batch size must be >= 2");
    if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
    if (hidden_dim < 0 || out_dim < 0) throw InvalidArgument("adapter dims must be >= 0");
}

AdapterPair<double> init_adapters(Eigen::Index chat_dim, Eigen::Index music_dim, const TrainConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    const Eigen::Index out = cfg.out_dim > 0 ? cfg.out_dim : chat_dim;
    AdapterPair<double> pair;
    pair.shared = cfg.shared;
    if (cfg.shared && chat_dim != music_dim) throw InvalidArgument("shared adapter needs equal input dims");
    pair.text = MlpAdapter<double>::glorot(chat_dim, cfg.hidden_dim > 0 ? cfg.hidden_dim : chat_dim, out, rng);
    if (!cfg.shared) {
        pair.music = MlpAdapter<double>::glorot(music_dim, cfg.hidden_dim > 0 ? cfg.hidden_dim : music_dim, out, rng);
    }
    return pair;
}

namespace {

void sgd_step(MlpAdapter<double>& p, const AdapterGradients<double>& g, double lr) {
    p.w1 -= lr * g.w1;
    p.b1 -= lr * g.b1;
    p.w2 -= lr * g.w2;
    p.b2 -= lr * g.b2;
}

}  // namespace

TrainResult train(const Eigen::MatrixXd& chat_in, const Eigen::MatrixXd& music_in, const TrainConfig& cfg) {
    return train(chat_in, music_in, cfg, init_adapters(chat_in.cols(), music_in.cols(), cfg));
}

TrainResult train(const Eigen::MatrixXd& chat_in, const Eigen::MatrixXd& music_in, const TrainConfig& cfg,
                  AdapterPair<double> init) {
    cfg.validate();
    if (chat_in.rows() != music_in.rows()) throw InvalidArgument("chat and music pair counts differ");
    const auto n = static_cast<std::size_t>(chat_in.rows());
    if (n < cfg.batch_size) throw InvalidArgument("fewer pairs than the batch size");

    TrainResult result{std::move(init), {}};
    // Shuffle stream is separate from initialization so both stay reproducible.
    std::mt19937_64 rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, n - start);
            if (len < 2) break;
            const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(start + len));
            const Eigen::MatrixXd xb = chat_in(idx, Eigen::all);
            const Eigen::MatrixXd yb = music_in(idx, Eigen::all);
            PairGradients<double> grads;
            try {
                grads = infonce_gradients(result.adapters, xb, yb, cfg.tau);
            } catch (const NumericError& e) {
                throw NumericError("training diverged in epoch " + std::to_string(epoch + 1) + ": " + e.what());
            }
            if (!std::isfinite(grads.loss)) {
                throw NumericError("training diverged in epoch " + std::to_string(epoch + 1));
            }
            loss_sum += grads.loss;
            ++batches;
            sgd_step(result.adapters.text, grads.text, cfg.learning_rate);
            if (!result.adapters.shared) sgd_step(result.adapters.music, grads.music, cfg.learning_rate);
        }
        const double mean = loss_sum / static_cast<double>(batches);
        if (!std::isfinite(mean) || !result.adapters.text.all_finite() ||
            (!result.adapters.shared && !result.adapters.music.all_finite())) {
            throw NumericError("training diverged in epoch " + std::to_string(epoch + 1));
        }
        result.epoch_loss.push_back(mean);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

std::vector<double> row_major(const Eigen::MatrixXd& m) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    return out;
}

Eigen::MatrixXd from_row_major(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
    const auto v = j.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != rows * cols) throw DataError("checkpoint array has wrong size");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
    return m;
}

}  // namespace

nlohmann::json adapter_to_json(const MlpAdapter<double>& a) {
    nlohmann::json j;
    j["d_in"] = a.in_dim();
    j["d_h"] = a.hidden_dim();
    j["d_out"] = a.out_dim();
    j["activation"] = "tanh";
    j["w1"] = row_major(a.w1);
    j["b1"] = row_major(a.b1);
    j["w2"] = row_major(a.w2);
    j["b2"] = row_major(a.b2);
    return j;
}

MlpAdapter<double> adapter_from_json(const nlohmann::json& j) {
    try {
        const auto d_in = j.at("d_in").get<Eigen::Index>();
        const auto d_h = j.at("d_h").get<Eigen::Index>();
        const auto d_out = j.at("d_out").get<Eigen::Index>();
        if (d_in < 1 || d_h < 1 || d_out < 1) throw DataError("checkpoint dims must be positive");
        if (j.value("activation", std::string("tanh")) != "tanh") throw DataError("unsupported activation");
        MlpAdapter<double> a;
        a.w1 = from_row_major(j.at("w1"), d_in, d_h);
        a.b1 = from_row_major(j.at("b1"), d_h, 1);
        a.w2 = from_row_major(j.at("w2"), d_h, d_out);
        a.b2 = from_row_major(j.at("b2"), d_out, 1);
        if (!a.all_finite()) throw DataError("checkpoint has non-finite parameters");
        return a;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed adapter checkpoint: ") + e.what());
    }
}

void save_checkpoint(const AdapterPair<double>& adapters, double tau, const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = "mdgen-adapter-v1";
    j["tau"] = tau;
    j["shared"] = adapters.shared;
    j["text"] = adapter_to_json(adapters.text);
    if (!adapters.shared) j["music"] = adapter_to_json(adapters.music);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump() << '\n';
    if (!out) throw DataError("write failed: " + path.string());
}

AdapterPair<double> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
    AdapterPair<double> pair;
    try {
        pair.shared = j.value("shared", false);
        pair.text = adapter_from_json(j.at("text"));
        if (!pair.shared) pair.music = adapter_from_json(j.at("music"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed checkpoint: ") + e.what());
    }
    if (pair.text.out_dim() != pair.music_side().out_dim()) throw DataError("adapter output dims differ");
    return pair;
}

}  // namespace mdgen
