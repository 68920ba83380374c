#include "microseg/image.hpp"

namespace microseg {

const ClassTaxonomy& ClassTaxonomy::microconstituent() {
    static const ClassTaxonomy t{
        {"matrix", "network", "spheroidite", "widmanstatten"},
        {Rgb{31, 63, 140}, Rgb{102, 204, 238}, Rgb{230, 204, 51}, Rgb{51, 160, 68}},
    };
    return t;
}

const ClassTaxonomy& ClassTaxonomy::particle() {
    static const ClassTaxonomy t{
        {"matrix", "spheroidite"},
        {Rgb{31, 63, 140}, Rgb{230, 204, 51}},
    };
    return t;
}

}  // namespace microseg
