#include "univla/vocab.hpp"

#include "univla/common.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace univla {

namespace {

const char* kSpecialSurfaces[kNumSpecials] = {"<bos>", "<eos>", "<pad>", "<boi>",
                                              "<eoi>", "<boa>", "<eoa>"};

const char* tag_name(Modality m) {
    switch (m) {
    case Modality::special: return "special";
    case Modality::text: return "text";
    case Modality::vision: return "vision";
    case Modality::action: return "action";
    }
    return "?";
}

} // namespace

Vocabulary Vocabulary::build(int text_size, int vision_size, int action_size,
                             std::vector<std::string> text_surfaces) {
    if (text_size <= 0 || vision_size <= 0 || action_size <= 0)
        throw InvalidArgument("vocabulary sizes must be positive");
    if (!text_surfaces.empty() && static_cast<int>(text_surfaces.size()) != text_size)
        throw InvalidArgument("text surface count does not match text_size");
    Vocabulary v;
    v.text_ = {kNumSpecials, kNumSpecials + text_size};
    v.vision_ = {v.text_.end, v.text_.end + vision_size};
    v.action_ = {v.vision_.end, v.vision_.end + action_size};
    v.total_ = v.action_.end;
    if (text_surfaces.empty()) {
        v.surfaces_.reserve(text_size);
        for (int i = 0; i < text_size; ++i) v.surfaces_.push_back("w" + std::to_string(i));
    } else {
        v.surfaces_ = std::move(text_surfaces);
    }
    return v;
}

Modality Vocabulary::classify(int id) const {
    if (id >= 0 && id < kNumSpecials) return Modality::special;
    if (text_.contains(id)) return Modality::text;
    if (vision_.contains(id)) return Modality::vision;
    if (action_.contains(id)) return Modality::action;
    throw InvalidArgument("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(total_));
}

int Vocabulary::text_id(int index) const {
    if (index < 0 || index >= text_.size()) throw InvalidArgument("text index out of range");
    return text_.begin + index;
}

int Vocabulary::vision_id(int index) const {
    if (index < 0 || index >= vision_.size()) throw InvalidArgument("vision index out of range");
    return vision_.begin + index;
}

int Vocabulary::action_id(int index) const {
    if (index < 0 || index >= action_.size()) throw InvalidArgument("action index out of range");
    return action_.begin + index;
}

int Vocabulary::text_index(int id) const {
    if (!text_.contains(id)) throw InvalidArgument("id not in text range");
    return id - text_.begin;
}

int Vocabulary::vision_index(int id) const {
    if (!vision_.contains(id)) throw InvalidArgument("id not in vision range");
    return id - vision_.begin;
}

int Vocabulary::action_index(int id) const {
    if (!action_.contains(id)) throw InvalidArgument("id not in action range");
    return id - action_.begin;
}

std::string Vocabulary::surface(int id) const {
    switch (classify(id)) {
    case Modality::special: return kSpecialSurfaces[id];
    case Modality::text: return surfaces_[static_cast<std::size_t>(id - text_.begin)];
    case Modality::vision: return "v" + std::to_string(id - vision_.begin);
    case Modality::action: return "a" + std::to_string(id - action_.begin);
    }
    return "?";
}

void Vocabulary::save_manifest(std::ostream& os) const {
    os << "univla.vocab.v1\n";
    for (int id = 0; id < total_; ++id)
        os << id << '\t' << tag_name(classify(id)) << '\t' << surface(id) << '\n';
}

Vocabulary Vocabulary::load_manifest(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "univla.vocab.v1")
        throw CorruptStream("vocabulary manifest: bad header");
    int expected = 0;
    int counts[4] = {0, 0, 0, 0};
    std::vector<std::string> surfaces;
    int last_tag = -1;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::size_t t1 = line.find('\t');
        std::size_t t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw CorruptStream("vocabulary manifest: malformed line");
        int id = 0;
        try {
            id = std::stoi(line.substr(0, t1));
        } catch (const std::exception&) {
            throw CorruptStream("vocabulary manifest: bad id field");
        }
        std::string tag = line.substr(t1 + 1, t2 - t1 - 1);
        std::string surf = line.substr(t2 + 1);
        if (id != expected) throw CorruptStream("vocabulary manifest: ids not contiguous");
        int tag_idx = tag == "special" ? 0 : tag == "text" ? 1 : tag == "vision" ? 2 :
                      tag == "action" ? 3 : -1;
        if (tag_idx < 0) throw CorruptStream("vocabulary manifest: unknown tag " + tag);
        if (tag_idx < last_tag) throw CorruptStream("vocabulary manifest: ranges out of order");
        last_tag = tag_idx;
        ++counts[tag_idx];
        if (tag_idx == 1) surfaces.push_back(surf);
        ++expected;
    }
    if (counts[0] != kNumSpecials) throw CorruptStream("vocabulary manifest: bad special count");
    if (counts[1] == 0 || counts[2] == 0 || counts[3] == 0)
        throw CorruptStream("vocabulary manifest: empty modality range");
    return build(counts[1], counts[2], counts[3], std::move(surfaces));
}

bool Vocabulary::operator==(const Vocabulary& other) const {
    return text_.begin == other.text_.begin && text_.end == other.text_.end &&
           vision_.end == other.vision_.end && action_.end == other.action_.end &&
           surfaces_ == other.surfaces_;
}

TextTokenizer::TextTokenizer(const Vocabulary& vocab)
    : surfaces_(vocab.text_surfaces()), text_(vocab.text_range()) {
    for (int i = 0; i < static_cast<int>(surfaces_.size()); ++i)
        word_to_id_[surfaces_[static_cast<std::size_t>(i)]] = text_.begin + i;
}

std::vector<std::string> TextTokenizer::collect_words(const std::vector<std::string>& texts) {
    std::set<std::string> words;
    for (const auto& t : texts) {
        std::istringstream ss(t);
        std::string w;
        while (ss >> w) words.insert(w);
    }
    return {words.begin(), words.end()};
}

std::vector<int> TextTokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream ss(text);
    std::string w;
    while (ss >> w) {
        auto it = word_to_id_.find(w);
        if (it == word_to_id_.end()) throw InvalidArgument("unknown word: " + w);
        out.push_back(it->second);
    }
    return out;
}

std::string TextTokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!text_.contains(ids[i])) throw InvalidArgument("id not in text range");
        if (i) out += ' ';
        out += surfaces_[static_cast<std::size_t>(ids[i] - text_.begin)];
    }
    return out;
}

} // namespace univla
