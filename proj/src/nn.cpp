#include "vdrive/nn.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vdrive/vdtn.hpp"

namespace vdrive::nn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sanitize(const std::string& name) {
    std::string out = name;
    for (char& c : out) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') c = '_';
    }
    return out;
}

}  // namespace

void save_checkpoint(const ParamStore& params, const std::string& dir) {
    fs::create_directories(dir);
    json index = json::array();
    for (std::size_t i = 0; i < params.count(); ++i) {
        std::string file = "p" + std::to_string(i) + "_" + sanitize(params.name(i)) + ".vdtn";
        save_vdtn((fs::path(dir) / file).string(), params[i]);
        index.push_back({{"name", params.name(i)}, {"file", file}});
    }
    std::ofstream f(fs::path(dir) / "index.json");
    if (!f) throw ValidationError("checkpoint: cannot write index in " + dir);
    f << index.dump(2) << "\n";
}

void load_checkpoint(ParamStore& params, const std::string& dir) {
    std::ifstream f(fs::path(dir) / "index.json");
    if (!f) throw ValidationError("checkpoint: missing index.json in " + dir);
    json index = json::parse(f);
    for (const auto& entry : index) {
        std::string name = entry.at("name").get<std::string>();
        std::string file = entry.at("file").get<std::string>();
        Tensor t = load_vdtn((fs::path(dir) / file).string());
        Tensor& dst = params.at(name);
        if (dst.dims != t.dims) {
            throw ValidationError("checkpoint: " + name + " dims " + dims_to_string(t.dims) +
                                  " do not match expected " + dims_to_string(dst.dims));
        }
        dst = std::move(t);
    }
}

bool checkpoint_exists(const std::string& dir) {
    return fs::exists(fs::path(dir) / "index.json");
}

}  // namespace vdrive::nn
