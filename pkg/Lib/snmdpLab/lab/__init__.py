""" Experiment tools for snmdpLab.


	build() is a convenience function for reading and executing an experiment document.
		documentPath: 				filepath to the .snmdp document, or a folder of them
		outputFolder:				folder for the reports, next to the document if None
		seed:						master seed, overrides the documents
		workers:					size of the worker pool
		verbose:					True / False for lots or no feedback
		logPath:					filepath to a log file
		progressFunc:				an optional callback to report progress.
									see snmdpLab.lab.tokenProgressFunc

"""


def tokenProgressFunc(state="update", action=None, text=None, tick=0):
	"""
		state: 		string, "prep", "generate", "done", "error"
		action:		string, "load", "start", "run", "stop"
		text:		string, value, additional parameter. For instance the subcommand.
		tick:		a float between 0 and 1 indicating progress.
	"""
	print("tokenProgressFunc %s: %s\n%s (%s)"%(state, str(action), str(text), str(tick)))

def build(
		documentPath,
		outputFolder=None,
		seed=None,
		workers=1,
		verbose=True,
		logPath=None,
		progressFunc=None,
		):
	"""

		Simple builder for experiment documents. Runs every subcommand a
		document describes and returns the RunSummary dicts, one per document.

	"""
	from snmdpLab.lab.document import ExperimentDocumentReader
	import os, glob
	if os.path.isdir(documentPath):
		# process all *.snmdp documents in this folder
		todo = sorted(glob.glob(os.path.join(documentPath, "*.snmdp")))
	else:
		todo = [documentPath]
	results = []
	for path in todo:
		folder = outputFolder
		if folder is None:
			folder = os.path.splitext(path)[0] + "-reports"
		elif len(todo) > 1:
			folder = os.path.join(outputFolder, os.path.splitext(os.path.basename(path))[0])
		reader = ExperimentDocumentReader(
				path,
				seed=seed,
				verbose=verbose,
				logPath=logPath,
				progressFunc=progressFunc
				)
		reader.process(folder, workers=workers)
		results.append(reader.results)
	reader = None
	return results
