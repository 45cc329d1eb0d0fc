from test.test_acquisition import *
from test.test_chain import *
from test.test_cli import *
from test.test_config import *
from test.test_faxion import *
from test.test_network import *
from test.test_pipeline import *
from test.test_search import *
