from . import pretrain  # noqa
from . import distill  # noqa
from . import meanflow_distill  # noqa
from . import sample  # noqa
from . import eval  # noqa
from . import verify  # noqa
from . import prune  # noqa
