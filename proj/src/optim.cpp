#include "aggcap/autodiff.hpp"
#include "aggcap/errors.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace aggcap::nn {

void adam_step(std::span<Parameter* const> params, AdamState& state) {
    if (state.first_moment.size() != params.size()) {
        state.first_moment.clear();
        state.second_moment.clear();
        for (const Parameter* p : params) {
            state.first_moment.emplace_back(p->value.rows, p->value.cols);
            state.second_moment.emplace_back(p->value.rows, p->value.cols);
        }
        state.step = 0;
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        if (!p.grad.same_shape(p.value)) throw std::invalid_argument("adam_step: gradient shape mismatch for " + p.name);
        auto& m = state.first_moment[k].data;
        auto& v = state.second_moment[k].data;
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const double g = p.grad.data[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            p.value.data[i] -= state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
    }
}

namespace {

constexpr char kMagic[8] = {'A', 'G', 'C', 'K', 'P', 'T', '0', '1'};

// Host byte order is assumed little-endian.
void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t get_u64(std::istream& in, const std::string& path) {
    std::uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ParseError(path + ": truncated checkpoint");
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, std::span<const Parameter* const> params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.write(kMagic, sizeof kMagic);
    put_u64(out, params.size());
    for (const Parameter* p : params) {
        put_u64(out, p->name.size());
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put_u64(out, 2);
        put_u64(out, p->value.rows);
        put_u64(out, p->value.cols);
        out.write(reinterpret_cast<const char*>(p->value.data.data()),
                  static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path);

    std::ofstream manifest(path + ".manifest");
    manifest << "format AGCKPT01\nparameters " << params.size() << "\n";
    for (const Parameter* p : params) manifest << p->name << ' ' << p->value.rows << ' ' << p->value.cols << "\n";
}

std::vector<Parameter> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[sizeof kMagic];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw ParseError(path + ": not a checkpoint file");
    const std::uint64_t count = get_u64(in, path);
    if (count > (1u << 20)) throw ParseError(path + ": implausible parameter count");
    std::vector<Parameter> params;
    for (std::uint64_t k = 0; k < count; ++k) {
        const std::uint64_t len = get_u64(in, path);
        if (len > 4096) throw ParseError(path + ": implausible name length");
        std::string name(len, '\0');
        if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw ParseError(path + ": truncated checkpoint");
        if (get_u64(in, path) != 2) throw ParseError(path + ": only 2-d tensors are supported");
        const std::uint64_t rows = get_u64(in, path);
        const std::uint64_t cols = get_u64(in, path);
        if (rows * cols > (1ull << 28)) throw ParseError(path + ": implausible tensor size");
        Matrix value(rows, cols);
        if (!in.read(reinterpret_cast<char*>(value.data.data()), static_cast<std::streamsize>(rows * cols * sizeof(double))))
            throw ParseError(path + ": truncated checkpoint");
        params.emplace_back(std::move(name), std::move(value));
    }
    return params;
}

void restore_checkpoint(std::span<Parameter* const> params, const std::vector<Parameter>& loaded) {
    for (Parameter* p : params) {
        const Parameter* match = nullptr;
        for (const auto& q : loaded)
            if (q.name == p->name) match = &q;
        if (!match) throw std::invalid_argument("checkpoint has no parameter named " + p->name);
        if (!match->value.same_shape(p->value))
            throw std::invalid_argument("checkpoint shape mismatch for " + p->name);
        p->value = match->value;
        p->zero_grad();
    }
}

} // namespace aggcap::nn
