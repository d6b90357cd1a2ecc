#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "camila/image.hpp"
#include "camila/world.hpp"

// Episode files: a text header of `key = value` records followed by named
// binary netpbm payloads, each introduced by a `payload <name> <bytes>` line.

namespace camila::world {

namespace detail {

inline std::string index_or_dash(std::size_t v) { return v == kNone ? "-" : std::to_string(v); }

inline std::size_t parse_index(const std::string& s) {
    if (s == "-") {
        return kNone;
    }
    try {
        return std::stoul(s);
    } catch (const std::exception&) {
        throw FormatError("expected an index, got '" + s + "'");
    }
}

inline std::string join(const std::vector<std::string>& words) {
    std::string s;
    for (const auto& w : words) {
        s += (s.empty() ? "" : " ") + w;
    }
    return s;
}

inline std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) {
        out.push_back(w);
    }
    return out;
}

}  // namespace detail

inline std::string encode_episode(const Episode& ep) {
    std::ostringstream os;
    os << "camila-episode 1\n";
    os << "seed = " << ep.seed << "\n";
    os << "task = " << task_name(ep.task) << "\n";
    os << "size = " << ep.scene.image.height << "\n";
    os << "objects = " << ep.scene.objects.size() << "\n";
    for (std::size_t i = 0; i < ep.scene.objects.size(); ++i) {
        const auto& o = ep.scene.objects[i];
        os << "object." << i << " = " << kLabels[o.label].word << " " << kColors[o.color].word << " " << o.quadrant
           << " " << o.box.x << " " << o.box.y << " " << o.box.w << " " << o.box.h << "\n";
    }
    os << "instructions = " << ep.instructions.size() << "\n";
    for (std::size_t i = 0; i < ep.instructions.size(); ++i) {
        const auto& in = ep.instructions[i];
        const std::string p = "instruction." + std::to_string(i);
        os << p << ".text = " << instruction_text(in) << "\n";
        os << p << ".category = " << category_name(in.category) << "\n";
        os << p << ".applicable = " << (in.applicable ? 1 : 0) << "\n";
        os << p << ".fields = " << in.label << " " << detail::index_or_dash(in.new_label) << " "
           << detail::index_or_dash(in.color) << " " << detail::index_or_dash(in.quadrant) << "\n";
    }
    os << "goal_description = " << detail::join(ep.goal_description) << "\n";
    std::string out = os.str();
    auto payload = [&](const std::string& name, const std::string& bytes) {
        out += "payload " + name + " " + std::to_string(bytes.size()) + "\n";
        out += bytes;
        out += "\n";
    };
    payload("scene", encode_ppm(ep.scene.image));
    payload("goal", encode_ppm(ep.goal_image));
    for (std::size_t i = 0; i < ep.instructions.size(); ++i) {
        payload("mask." + std::to_string(i), encode_pgm(ep.instructions[i].target_mask));
    }
    return out;
}

inline Episode decode_episode(const std::string& bytes) {
    std::map<std::string, std::string> kv;
    std::map<std::string, std::string> payloads;
    std::size_t pos = 0;
    auto next_line = [&]() {
        const std::size_t end = bytes.find('\n', pos);
        if (end == std::string::npos) {
            throw FormatError("unterminated line in episode file");
        }
        std::string line = bytes.substr(pos, end - pos);
        pos = end + 1;
        return line;
    };
    if (next_line() != "camila-episode 1") {
        throw FormatError("not a camila episode file (bad magic)");
    }
    while (pos < bytes.size()) {
        const std::string line = next_line();
        if (line.rfind("payload ", 0) == 0) {
            std::istringstream is(line.substr(8));
            std::string name;
            std::size_t n = 0;
            if (!(is >> name >> n) || pos + n + 1 > bytes.size()) {
                throw FormatError("malformed payload header '" + line + "'");
            }
            payloads[name] = bytes.substr(pos, n);
            pos += n + 1;
            continue;
        }
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) {
            throw FormatError("malformed record '" + line + "'");
        }
        kv[line.substr(0, eq)] = line.substr(eq + 3);
    }
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) {
            throw FormatError("episode file missing key '" + key + "'");
        }
        return it->second;
    };
    auto get_payload = [&](const std::string& key) -> const std::string& {
        auto it = payloads.find(key);
        if (it == payloads.end()) {
            throw FormatError("episode file missing payload '" + key + "'");
        }
        return it->second;
    };
    auto label_id = [](const std::string& w) {
        for (std::size_t l = 0; l < kLabels.size(); ++l) {
            if (kLabels[l].word == w) {
                return l;
            }
        }
        throw FormatError("unknown label '" + w + "'");
    };
    auto color_id = [](const std::string& w) {
        for (std::size_t c = 0; c < kColors.size(); ++c) {
            if (kColors[c].word == w) {
                return c;
            }
        }
        throw FormatError("unknown color '" + w + "'");
    };

    Episode ep;
    try {
        ep.seed = std::stoull(get("seed"));
        ep.task = parse_task(get("task"));
        const std::size_t n_obj = std::stoul(get("objects"));
        for (std::size_t i = 0; i < n_obj; ++i) {
            std::istringstream is(get("object." + std::to_string(i)));
            std::string lw, cw;
            SceneObject o;
            if (!(is >> lw >> cw >> o.quadrant >> o.box.x >> o.box.y >> o.box.w >> o.box.h)) {
                throw FormatError("malformed object record");
            }
            o.label = label_id(lw);
            o.color = color_id(cw);
            ep.scene.objects.push_back(o);
        }
        const std::size_t n_in = std::stoul(get("instructions"));
        for (std::size_t i = 0; i < n_in; ++i) {
            const std::string p = "instruction." + std::to_string(i);
            Instruction in;
            in.category = parse_category(get(p + ".category"));
            in.applicable = get(p + ".applicable") == "1";
            const auto f = detail::split_words(get(p + ".fields"));
            if (f.size() != 4) {
                throw FormatError("malformed instruction fields");
            }
            in.label = detail::parse_index(f[0]);
            in.new_label = detail::parse_index(f[1]);
            in.color = detail::parse_index(f[2]);
            in.quadrant = detail::parse_index(f[3]);
            in.target_mask = decode_pgm(get_payload("mask." + std::to_string(i)));
            if (instruction_text(in) != get(p + ".text")) {
                throw FormatError("instruction text disagrees with its fields");
            }
            ep.instructions.push_back(std::move(in));
        }
    } catch (const std::invalid_argument&) {
        throw FormatError("malformed numeric field in episode file");
    } catch (const std::out_of_range&) {
        throw FormatError("numeric field out of range in episode file");
    }
    ep.goal_description = detail::split_words(get("goal_description"));
    ep.scene.image = decode_ppm(get_payload("scene"));
    ep.goal_image = decode_ppm(get_payload("goal"));
    return ep;
}

inline void save_episode(const Episode& ep, const std::string& path) { write_file(path, encode_episode(ep)); }
inline Episode load_episode(const std::string& path) { return decode_episode(read_file(path)); }

// ---------------------------------------------------------------------------
// Splits

struct SplitCounts {
    std::size_t train = 256;
    std::size_t val = 32;
    std::size_t test = 64;
};

inline constexpr std::array<const char*, 3> kSplitNames = {"train", "val", "test"};

inline std::uint64_t episode_seed(std::uint64_t seed, std::size_t split, std::size_t index) {
    return mix_seed(mix_seed(seed, split), index);
}

inline std::string episode_filename(std::size_t index) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "episode_%05zu.episode", index);
    return buf;
}

/// Writes `<out>/<split>/episode_NNNNN.episode` for each split plus a
/// `dataset.manifest` with counts and provenance.
inline void build_split(const SplitCounts& counts, std::uint64_t seed, const std::string& out_dir,
                        const SceneConfig& config = {}) {
    namespace fs = std::filesystem;
    const std::array<std::size_t, 3> n = {counts.train, counts.val, counts.test};
    for (std::size_t c : n) {
        if (c < 1) {
            throw ContractError("every split needs at least one episode");
        }
    }
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw IoError("cannot create " + out_dir + ": " + ec.message());
    }
    for (std::size_t s = 0; s < 3; ++s) {
        const fs::path dir = fs::path(out_dir) / kSplitNames[s];
        fs::create_directories(dir, ec);
        if (ec) {
            throw IoError("cannot create " + dir.string() + ": " + ec.message());
        }
        for (std::size_t i = 0; i < n[s]; ++i) {
            save_episode(gen_episode(episode_seed(seed, s, i), config), (dir / episode_filename(i)).string());
        }
    }
    std::ostringstream os;
    os << "camila-dataset 1\n";
    os << "seed = " << seed << "\n";
    os << "train = " << counts.train << "\n";
    os << "val = " << counts.val << "\n";
    os << "test = " << counts.test << "\n";
    os << "reference_task_totals = " << kTaskTotals[0] << " " << kTaskTotals[1] << " " << kTaskTotals[2] << " "
       << kTaskTotals[3] << "\n";
    write_file((fs::path(out_dir) / "dataset.manifest").string(), os.str());
}

inline std::vector<Episode> load_split(const std::string& data_dir, const std::string& split) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::path(data_dir) / split;
    if (!fs::is_directory(dir)) {
        throw IoError("missing split directory " + dir.string());
    }
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".episode") {
            files.push_back(entry.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<Episode> out;
    out.reserve(files.size());
    for (const auto& f : files) {
        out.push_back(load_episode(f));
    }
    return out;
}

}  // namespace camila::world
