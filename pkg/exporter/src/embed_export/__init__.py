from .export import ExportJob, FakeImages, export, export_records, load_backbone
from .fse import Fse1Writer

__version__ = "0.1.0"
