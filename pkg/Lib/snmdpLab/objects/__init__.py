""" Objects for snmdpLab. """
