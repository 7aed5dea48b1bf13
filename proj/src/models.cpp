#include "obn/models.hpp"

#include <cctype>

namespace obn {

namespace {

bool stage_has_projection(const NetworkSpec& spec, size_t stage_idx) {
    const StageSpec& st = spec.stages[stage_idx];
    const int s_in = stage_idx == 0 ? spec.stem_channels : spec.stages[stage_idx - 1].channels;
    const bool geom_change = st.stride != 1 || s_in != st.channels;
    if (!geom_change) return false;
    // Shared-basis stages always project; baselines follow the family rule.
    return st.basis.s > 0 || st.basis.tied || spec.projection_baseline;
}

} // namespace

void NetworkSpec::validate() const {
    if (stages.empty()) throw ConfigError("spec: no stages");
    if (classes < 2) throw ConfigError("spec: classes must be >= 2");
    int prev = stem_channels;
    for (size_t g = 0; g < stages.size(); ++g) {
        const StageSpec& st = stages[g];
        if (st.blocks < 1) throw ConfigError("spec: stage needs >= 1 block");
        if (st.channels < 1) throw ConfigError("spec: stage channels must be >= 1");
        if (st.basis.s < 0 || st.basis.u < 0) throw ConfigError("spec: negative rank");
        if (st.basis.s > 0) {
            const int r = st.basis.s + st.basis.u;
            if (r > kernel * kernel * st.channels)
                throw ConfigError("spec: rank " + std::to_string(r) + " exceeds k²S = " +
                                  std::to_string(kernel * kernel * st.channels) + " in stage " +
                                  std::to_string(g));
            if (st.blocks < 2)
                throw ConfigError("spec: basis stage needs >= 2 blocks (entry + recursive)");
        }
        if (st.basis.s == 0 && st.basis.u > 0)
            throw ConfigError("spec: unshared elements require s >= 1");
        prev = st.channels;
    }
    (void)prev;
}

NetworkSpec spec_from_name(const std::string& name) {
    auto fail = [&](size_t pos, const std::string& what) {
        throw ConfigError("model name '" + name + "': " + what + " at position " +
                          std::to_string(pos));
    };
    const std::string prefix = "ResNet";
    if (name.rfind(prefix, 0) != 0) fail(0, "expected 'ResNet'");
    size_t p = prefix.size();
    size_t d0 = p;
    while (p < name.size() && std::isdigit(static_cast<unsigned char>(name[p]))) ++p;
    if (p == d0) fail(p, "expected layer count");
    const int layers = std::stoi(name.substr(d0, p - d0));

    int s = 0, u = 0;
    bool dual = false;
    if (p < name.size() && name[p] == '-') {
        ++p;
        if (p >= name.size() || name[p] != 'S') fail(p, "expected 'S'");
        ++p;
        d0 = p;
        while (p < name.size() && std::isdigit(static_cast<unsigned char>(name[p]))) ++p;
        if (p == d0) fail(p, "expected shared element count");
        s = std::stoi(name.substr(d0, p - d0));
        if (p >= name.size() || name[p] != 'U') fail(p, "expected 'U'");
        ++p;
        d0 = p;
        while (p < name.size() && std::isdigit(static_cast<unsigned char>(name[p]))) ++p;
        if (p == d0) fail(p, "expected unshared element count");
        u = std::stoi(name.substr(d0, p - d0));
        if (s < 1) fail(d0, "shared element count must be >= 1");
    }
    if (p < name.size()) {
        if (name.compare(p, 3, "\xe2\x80\xa1") == 0) { // UTF-8 ‡
            dual = true;
            p += 3;
        } else if (name[p] == '#') {
            dual = true;
            ++p;
        }
    }
    if (p != name.size()) fail(p, "unexpected trailing characters");
    if (dual && s == 0) fail(p, "dual-basis marker requires -SsUu");

    NetworkSpec spec;
    std::vector<std::pair<int, int>> layout; // (blocks, channels)
    if (layers == 18 || layers == 34) {
        spec.stem_channels = 64;
        spec.projection_baseline = true;
        if (layers == 18)
            layout = {{2, 64}, {2, 128}, {2, 256}, {2, 512}};
        else
            layout = {{3, 64}, {4, 128}, {6, 256}, {3, 512}};
    } else if (layers >= 8 && (layers - 2) % 6 == 0) {
        const int n = (layers - 2) / 6;
        spec.stem_channels = 16;
        layout = {{n, 16}, {n, 32}, {n, 64}};
    } else {
        fail(prefix.size(), "unsupported layer count " + std::to_string(layers));
    }
    const int t0 = layout[0].second;
    for (size_t g = 0; g < layout.size(); ++g) {
        StageSpec st;
        st.blocks = layout[g].first;
        st.channels = layout[g].second;
        st.stride = g == 0 ? 1 : 2;
        if (s > 0) {
            const int scale = st.channels / t0; // ranks scale with stage width
            st.basis.s = s * scale;
            st.basis.u = u * scale;
            st.basis.dual = dual;
        }
        spec.stages.push_back(st);
    }
    spec.name = spec_to_name(spec);
    spec.validate();
    return spec;
}

std::string spec_to_name(const NetworkSpec& spec) {
    int conv_layers = 0;
    for (const auto& st : spec.stages) conv_layers += 2 * st.blocks;
    std::string out = "ResNet" + std::to_string(conv_layers + 2);
    const StageSpec& st0 = spec.stages.front();
    if (st0.basis.s > 0) {
        out += "-S" + std::to_string(st0.basis.s) + "U" + std::to_string(st0.basis.u);
        if (st0.basis.dual) out += "\xe2\x80\xa1";
    }
    return out;
}

CountReport count_network(const NetworkSpec& spec, int in_h, int in_w) {
    spec.validate();
    CountReport rep;
    auto add = [&](const std::string& n, long long p, long long f) {
        rep.layers.push_back({n, p, f});
    };
    const int k = spec.kernel;
    const long long k2 = static_cast<long long>(k) * k;
    long long h = in_h, w = in_w;
    if (spec.imagenet_stem) {
        h = (h + 1) / 2;
        w = (w + 1) / 2; // 7x7 stride-2 conv, padding 3
        add("stem.conv", static_cast<long long>(spec.stem_channels) * spec.in_channels * 49,
            static_cast<long long>(spec.stem_channels) * spec.in_channels * 49 * h * w);
        add("stem.bn", 2LL * spec.stem_channels, 0);
        h = (h + 1) / 2;
        w = (w + 1) / 2; // 3x3 stride-2 max pool
    } else {
        add("stem.conv", static_cast<long long>(spec.stem_channels) * spec.in_channels * k2,
            static_cast<long long>(spec.stem_channels) * spec.in_channels * k2 * h * w);
        add("stem.bn", 2LL * spec.stem_channels, 0);
    }

    int prev = spec.stem_channels;
    for (size_t g = 0; g < spec.stages.size(); ++g) {
        const StageSpec& st = spec.stages[g];
        const long long T = st.channels;
        const std::string sg = "s" + std::to_string(g);
        h /= st.stride;
        w /= st.stride;
        const long long hw = h * w;
        // entry block: always a plain full block
        add(sg + ".b0.conv1", T * prev * k2, T * prev * k2 * hw);
        add(sg + ".b0.conv2", T * T * k2, T * T * k2 * hw);
        add(sg + ".b0.bn", 4 * T, 0);
        if (stage_has_projection(spec, g)) {
            add(sg + ".b0.proj", T * prev, T * prev * hw);
            add(sg + ".b0.proj.bn", 2 * T, 0);
        }
        const int nb = st.blocks - 1;
        if (nb > 0 && st.basis.s > 0) {
            const long long s_g = st.basis.s, u_g = st.basis.u, R = s_g + u_g;
            const int nbases = st.basis.dual ? 2 : 1;
            add(sg + ".basis.shared", nbases * s_g * T * k2, 0);
            for (int b = 1; b <= nb; ++b) {
                const std::string bn = sg + ".b" + std::to_string(b);
                // two positions per block; shared conv costs FLOPs at every use
                add(bn + ".conv.shared_use", 0, 2 * s_g * T * k2 * hw);
                if (u_g > 0) add(bn + ".conv.unshared", 2 * u_g * T * k2, 2 * u_g * T * k2 * hw);
                add(bn + ".conv.coeff", 2 * T * R, 2 * T * R * hw);
                add(bn + ".bn", 4 * T, 0);
            }
        } else if (nb > 0 && st.basis.tied) {
            add(sg + ".tied.conv", 2 * T * T * k2, nb * 2 * T * T * k2 * hw);
            add(sg + ".tied.bn", 4 * T, 0);
        } else {
            for (int b = 1; b <= nb; ++b) {
                const std::string bn = sg + ".b" + std::to_string(b);
                add(bn + ".conv", 2 * T * T * k2, 2 * T * T * k2 * hw);
                add(bn + ".bn", 4 * T, 0);
            }
        }
        prev = st.channels;
    }
    add("fc", static_cast<long long>(spec.classes) * prev + spec.classes,
        static_cast<long long>(spec.classes) * prev);
    for (const auto& l : rep.layers) {
        rep.params += l.params;
        rep.flops += l.flops;
    }
    return rep;
}

long long count_params(const NetworkSpec& spec) {
    return count_network(spec, spec.in_h, spec.in_w).params;
}

long long count_flops(const NetworkSpec& spec, int in_h, int in_w) {
    return count_network(spec, in_h, in_w).flops;
}

} // namespace obn
