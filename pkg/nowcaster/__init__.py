__version__ = "0.1.0"


from .config import *
from .dataset import *
from .dfm import *
from .diagnostic import *
from .error import *
from .evaluation import *
from .imputation import *
from .lstm import *
from .news import *
from .period import *
from .report import *
from .synthetic import *
from .vintage import *
from .workflow import *
