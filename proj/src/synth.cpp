#include "rbnet/common.hpp"
