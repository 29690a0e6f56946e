#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest_torch.hpp"

#include <torch/torch.h>

#include "anogen/log.hpp"

int main(int argc, char** argv) {
    torch::set_num_threads(1);
    anogen::log::set_level(anogen::log::Level::error);
    doctest::Context context;
    context.applyCommandLine(argc, argv);
    return context.run();
}
